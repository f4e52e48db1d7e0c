//! Episode invariants under arbitrary action sequences.

use proptest::prelude::*;
use vtla_core::episode::{replay, reset, Action, Phase, StepResult, TaskConfig};
use vtla_core::geometry::{ShapeKind, CLEARANCE_RANGE};
use vtla_core::Error;

fn task() -> impl Strategy<Value = (TaskConfig, u64)> {
    (0usize..5, CLEARANCE_RANGE.0..CLEARANCE_RANGE.1, any::<u64>())
        .prop_map(|(k, c, seed)| (TaskConfig::new(ShapeKind::ALL[k], c), seed))
}

fn actions() -> impl Strategy<Value = Vec<Action>> {
    prop::collection::vec(
        (-4.0f64..4.0, -4.0f64..4.0, -8.0f64..8.0).prop_map(|(x, y, r)| Action::new(x, y, r)),
        1..25,
    )
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, cases: 512, ..ProptestConfig::default() })]

    #[test]
    fn episodes_end_within_the_attempt_budget((cfg, seed) in task(), acts in actions()) {
        let mut s = reset(cfg, seed).unwrap();
        let gxy = cfg.misalign_range_xy + cfg.clearance_mm;
        let grz = cfg.misalign_range_rz + cfg.clearance_mm;
        let mut results = Vec::new();
        for &a in &acts {
            if s.is_terminal() {
                prop_assert!(matches!(s.advance(a), Err(Error::EpisodeTerminated)));
                break;
            }
            results.push(s.advance(a).unwrap());
            prop_assert!(s.attempt <= cfg.max_attempts);
            prop_assert!(s.misalignment.x.abs() <= gxy && s.misalignment.y.abs() <= gxy);
            prop_assert!(s.misalignment.rz.abs() <= grz);
        }
        // Every result before the last is a collision.
        let (last, before) = results.split_last().unwrap();
        prop_assert!(before.iter().all(|r| *r == StepResult::Collided));
        match last {
            StepResult::Inserted => prop_assert_eq!(s.phase, Phase::Success),
            StepResult::Exhausted => prop_assert!(s.phase == Phase::Failure && s.attempt == 15),
            StepResult::Collided => prop_assert!(s.phase == Phase::InProgress && results.len() == acts.len()),
        }
        prop_assert_eq!(replay(cfg, seed, &acts[..results.len()]).unwrap(), results);
    }

    #[test]
    fn ground_truth_inserts_in_one_attempt((cfg, seed) in task()) {
        let mut s = reset(cfg, seed).unwrap();
        prop_assert!(s.misalignment.x.abs() <= 2.5 && s.misalignment.y.abs() <= 2.5 && s.misalignment.rz.abs() <= 5.0);
        let gt = s.ground_truth_action().unwrap();
        prop_assert_eq!(s.advance(gt).unwrap(), StepResult::Inserted);
        prop_assert_eq!(s.attempt, 1);
    }

    #[test]
    fn reset_is_deterministic((cfg, seed) in task()) {
        let (a, b) = (reset(cfg, seed).unwrap(), reset(cfg, seed).unwrap());
        prop_assert_eq!(a.misalignment, b.misalignment);
        prop_assert_eq!(a.randomization, b.randomization);
    }
}

#[test]
fn non_finite_actions_are_rejected() {
    let mut s = reset(TaskConfig::new(ShapeKind::Square, 1.0), 1).unwrap();
    assert!(s.advance(Action::new(f64::NAN, 0.0, 0.0)).is_err());
    assert_eq!(s.attempt, 0);
}
