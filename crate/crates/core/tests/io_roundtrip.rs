use lqg_transfer::io::{read_trajectory_csv, write_trajectory_csv, TrajectoryRecord};
use lqg_transfer::linalg::Matrix;
use lqg_transfer::{RngSeed, Trajectory};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

fn trajectory() -> impl Strategy<Value = Trajectory> {
    (1usize..4, 1usize..4, 1usize..30, 0usize..50).prop_flat_map(|(m, l, len, start)| {
        (
            prop::collection::vec(finite(), m * len),
            prop::collection::vec(finite(), l * len),
        )
            .prop_map(move |(u, y)| {
                Trajectory::new(Matrix::from_vec(m, len, u), Matrix::from_vec(l, len, y), start).unwrap()
            })
    })
}

fn same_bits(a: &Matrix, b: &Matrix) -> bool {
    a.shape() == b.shape() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn csv_round_trip_is_bit_exact(traj in trajectory()) {
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let back = read_trajectory_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.start_time, traj.start_time);
        prop_assert!(same_bits(&back.inputs, &traj.inputs));
        prop_assert!(same_bits(&back.outputs, &traj.outputs));
    }

    #[test]
    fn json_round_trip_is_bit_exact(traj in trajectory(), seed in prop::option::of(any::<u64>()), label in "[a-z0-9 _-]{0,12}") {
        let rec = TrajectoryRecord { traj, seed: seed.map(RngSeed), task_label: label };
        let back = TrajectoryRecord::from_json(&rec.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.seed, rec.seed);
        prop_assert_eq!(&back.task_label, &rec.task_label);
        prop_assert_eq!(back.traj.start_time, rec.traj.start_time);
        prop_assert!(same_bits(&back.traj.inputs, &rec.traj.inputs));
        prop_assert!(same_bits(&back.traj.outputs, &rec.traj.outputs));
    }
}

#[test]
fn files_on_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    let traj = Trajectory::new(
        Matrix::from_row_slice(1, 3, &[0.1, -0.2, 1.0 / 3.0]),
        Matrix::from_row_slice(2, 3, &[1e-300, 2.0, 3.5, -0.0, 5e300, 6.0]),
        4,
    )
    .unwrap();
    write_trajectory_csv(&traj, std::fs::File::create(&path).unwrap()).unwrap();
    let back = read_trajectory_csv(std::fs::File::open(&path).unwrap()).unwrap();
    assert!(same_bits(&back.inputs, &traj.inputs));
    assert!(same_bits(&back.outputs, &traj.outputs));
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("t,u_1,y_1,y_2\n4,"));
}

#[test]
fn json_envelope_fields() {
    let traj = Trajectory::new(
        Matrix::from_row_slice(1, 2, &[1.0, 2.0]),
        Matrix::from_row_slice(1, 2, &[3.0, 4.0]),
        0,
    )
    .unwrap();
    let rec = TrajectoryRecord {
        traj,
        seed: Some(RngSeed(9)),
        task_label: "target".into(),
    };
    let v: serde_json::Value = serde_json::from_str(&rec.to_json().unwrap()).unwrap();
    assert_eq!(v["T"], 1);
    assert_eq!(v["seed"], 9);
    assert_eq!(v["data"][1][1], 4.0);
}
