use procbench_core::control::ControllerKind;
use procbench_core::dataset::{read_dataset, stats, write_dataset, Recorder, RecorderSpec, Transition};
use procbench_core::env::EnvKind;
use procbench_core::runner::{generate, RunSpec};
use proptest::prelude::*;

fn spec() -> RecorderSpec {
    RecorderSpec {
        env: "test".into(),
        baseline: "none".into(),
        a_dim: 1,
        o_dim: 2,
        max_steps: 50,
        error_reward: -1e6,
        seed: 9,
        error_reward_checked: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arbitrary_values_survive_the_round_trip(
        values in proptest::collection::vec(-1e5f64..1e5, 1..40),
        scale in -300i32..300,
    ) {
        let mut rec = Recorder::new(spec());
        let last = values.len() - 1;
        for (k, v) in values.iter().enumerate() {
            let v = v * 10f64.powi(scale / 10);
            rec.record(Transition {
                episode_id: 0,
                step: k,
                observation: vec![v, v / 3.0],
                action: vec![-v],
                reward: (v / 7.0).max(-1e5),
                terminal: false,
                timeout: k == last,
            }).unwrap();
        }
        let data = rec.finish().unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&data, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        prop_assert_eq!(&back, &data);
        prop_assert_eq!(stats(&back).unwrap(), stats(&data).unwrap());
    }
}

#[test]
fn generated_dataset_is_independent_of_jobs() {
    let mut spec = RunSpec::new(EnvKind::Beer, ControllerKind::Random, 6, 4);
    let one = generate(&spec).unwrap().dataset;
    spec.jobs = 3;
    let three = generate(&spec).unwrap().dataset;
    assert_eq!(one, three);

    let dir = tempfile::tempdir().unwrap();
    write_dataset(&three, dir.path()).unwrap();
    let bytes = std::fs::read(dir.path().join("data.csv")).unwrap();
    write_dataset(&read_dataset(dir.path()).unwrap(), dir.path()).unwrap();
    assert_eq!(std::fs::read(dir.path().join("data.csv")).unwrap(), bytes);
}

#[test]
fn meta_matches_recorded_statistics() {
    let data = generate(&RunSpec::new(EnvKind::Atropine, ControllerKind::Zero, 3, 0)).unwrap().dataset;
    let s = stats(&data).unwrap();
    assert_eq!(data.meta.reward_mean, Some(s.reward_mean));
    assert_eq!(data.meta.reward_std, Some(s.reward_std));
    assert_eq!(data.meta.trajectory_count, 3);
    assert_eq!(s.episodes, 3);
    assert_eq!(s.success_rate, 1.0);
}
