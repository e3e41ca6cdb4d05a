//! Synthetic manipulator task families.
//!
//! Each task moves an object along fixed unit "drive" directions in joint
//! space: `object' = object + e · (W a)`, where `e` is an optional posture
//! gate. Because only `W a` matters for progress, the actions a task needs lie
//! in the row space of its drive matrix, which gives an exact oracle for the
//! synergy subspace a multi-task learner should discover.

mod dynamics;
mod sets;
mod task;

pub use dynamics::{clip_action, engagement, observe, reset, reward, step, JOINT_LIMIT, OBJECT_OBS_SCALE};
pub use sets::{
    drive_span_dim, make_cw_valve, make_cylindrical_valve, make_orthogonal_valve, make_sparse_valve,
    make_task_set, make_task_set_with, make_topdown_screw, make_unseen_tasks, oracle_subspace,
    EnvOptions, TaskSet, TaskSetId, DICE_GOAL_RADIUS, GRAVITY, SCREW_COUPLING, SPARSE_TARGET,
    SPARSE_THRESHOLD,
};
pub use task::{EnvState, RewardParams, StepResult, Task, TaskKind};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use proptest::prelude::*;

    fn unit(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    fn simple_valve(d: usize, w: Vec<f64>, beta: f64) -> Task {
        let mut t = make_task_set(TaskSetId::A, d, 0).unwrap().tasks[0].clone();
        t.drive = vec![w];
        t.reward.action_penalty = beta;
        t
    }

    #[test]
    fn set_a_has_four_valves_spanning_four_dims() {
        let set = make_task_set(TaskSetId::A, 20, 0).unwrap();
        assert_eq!(set.tasks.len(), 4);
        assert!(set.tasks.iter().all(|t| t.kind == TaskKind::Valve));
        assert_eq!(set.drive_span_dim, 4);
        for t in &set.tasks {
            t.validate().unwrap();
        }
    }

    #[test]
    fn set_b_kinds_and_object_dims() {
        let set = make_task_set(TaskSetId::B, 20, 0).unwrap();
        let kinds: Vec<_> = set.tasks.iter().map(|t| t.kind).collect();
        assert_eq!(kinds, vec![TaskKind::Dice, TaskKind::Valve, TaskKind::WeightPull, TaskKind::Screw]);
        let dims: Vec<_> = set.tasks.iter().map(Task::object_dim).collect();
        assert_eq!(dims, vec![3, 1, 1, 2]);
        assert_eq!(set.drive_span_dim, 7);
    }

    #[test]
    fn too_small_action_space_is_rejected() {
        assert!(make_task_set(TaskSetId::A, 4, 0).is_err());
        assert!(make_task_set(TaskSetId::B, 6, 0).is_err());
    }

    #[test]
    fn reset_states() {
        let set = make_task_set(TaskSetId::B, 20, 0).unwrap();
        let valve = &set.tasks[1];
        let s = reset(valve, 3);
        assert!(s.joints.iter().all(|&q| q == 0.0));
        assert_eq!(s.object, vec![0.0]);
        let sparse = make_sparse_valve(&set.tasks, false).unwrap();
        assert_eq!(reset(&sparse, 3), s);
        let dice = &set.tasks[0];
        let (a, b) = (reset(dice, 1), reset(dice, 2));
        assert_ne!(a.object, b.object);
        assert!(a.object.iter().map(|v| v * v).sum::<f64>() <= 1.0);
    }

    #[test]
    fn valve_step_matches_definition() {
        let w = unit(20, 3);
        let t = simple_valve(20, w, 0.0);
        let mut a = vec![0.0; 20];
        a[3] = 0.5;
        let r = step(&t, &reset(&t, 0), &a).unwrap();
        assert_eq!(r.reward, 0.5);
        assert_eq!(r.next_state.object, vec![0.5]);
        assert!((r.next_state.joints[3] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn sparse_valve_rewards_inside_threshold() {
        let set = make_task_set(TaskSetId::A, 20, 0).unwrap();
        let t = make_sparse_valve(&set.tasks, false).unwrap();
        let mut s = reset(&t, 0);
        s.object[0] = 1.45;
        let r = step(&t, &s, &vec![0.0; 20]).unwrap();
        assert_eq!(r.reward, 1.0);
        s.object[0] = 1.0;
        assert_eq!(step(&t, &s, &vec![0.0; 20]).unwrap().reward, 0.0);
    }

    #[test]
    fn zero_action_rewards() {
        let set = make_task_set(TaskSetId::B, 20, 0).unwrap();
        for t in &set.tasks {
            let mut t = t.clone();
            t.reward.action_penalty = 0.0;
            let r = step(&t, &reset(&t, 0), &vec![0.0; 20]).unwrap().reward;
            let expected = if t.kind == TaskKind::WeightPull { -GRAVITY } else { 0.0 };
            assert!((r - expected).abs() < 1e-15, "{:?}: {r}", t.kind);
        }
    }

    #[test]
    fn nan_and_out_of_box_actions_are_domain_errors() {
        let t = make_task_set(TaskSetId::A, 20, 0).unwrap().tasks[0].clone();
        let mut a = vec![0.0; 20];
        a[0] = f64::NAN;
        assert!(matches!(step(&t, &reset(&t, 0), &a), Err(crate::Error::Domain(_))));
        a[0] = 1.5;
        assert!(matches!(step(&t, &reset(&t, 0), &a), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn done_at_horizon() {
        let t = make_task_set(TaskSetId::A, 20, 0).unwrap().tasks[0].clone();
        let mut s = reset(&t, 0);
        for i in 0..t.horizon {
            let r = step(&t, &s, &vec![0.1; 20]).unwrap();
            assert_eq!(r.done, i + 1 == t.horizon);
            s = r.next_state;
        }
    }

    #[test]
    fn oracle_subspace_examples() {
        let mut t1 = simple_valve(20, unit(20, 0), 0.0);
        let b = oracle_subspace(std::slice::from_ref(&t1));
        assert_eq!(b.nrows(), 1);
        assert!(linalg::projection_residual(&b, &unit(20, 0)) < 1e-12);
        let mut t2 = t1.clone();
        t2.drive = vec![unit(20, 1)];
        t1.engagement_on = false;
        let b = oracle_subspace(&[t1, t2]);
        assert_eq!(b.nrows(), 2);
        assert!(linalg::projection_residual(&b, &unit(20, 1)) < 1e-12);
        let set = make_task_set(TaskSetId::A, 20, 0).unwrap();
        let b = oracle_subspace(&set.tasks);
        assert_eq!(b.nrows(), 4);
        assert!(linalg::orthonormality_error(&b) < 1e-10);
    }

    #[test]
    fn engaged_set_a_oracle_is_unchanged() {
        let opts = EnvOptions { engagement_on: true, ..EnvOptions::default() };
        let set = make_task_set_with(TaskSetId::A, 20, 0, &opts).unwrap();
        assert_eq!(oracle_subspace(&set.tasks).nrows(), 4);
        let set_b = make_task_set_with(TaskSetId::B, 20, 0, &opts).unwrap();
        assert_eq!(oracle_subspace(&set_b.tasks).nrows(), 11);
    }

    #[test]
    fn unseen_task_constructions() {
        let set_a = make_task_set(TaskSetId::A, 20, 0).unwrap();
        assert!(make_unseen_tasks(&set_a.tasks, 0).is_err());

        let mut cw = make_cw_valve(&set_a.tasks).unwrap();
        cw.reward.action_penalty = 0.0;
        let w = cw.drive[0].clone();
        let a: Vec<f64> = w.iter().map(|v| v * 0.5).collect();
        let r = step(&cw, &reset(&cw, 0), &a).unwrap();
        assert!((r.reward + 0.5).abs() < 1e-12);

        let cyl = make_cylindrical_valve(&set_a.tasks, 5).unwrap();
        let basis = oracle_subspace(&set_a.tasks);
        assert!(linalg::projection_residual(&basis, &cyl.drive[0]) < 1e-10);

        let set_b = make_task_set(TaskSetId::B, 20, 0).unwrap();
        let unseen = make_unseen_tasks(&set_b.tasks, 0).unwrap();
        assert_eq!(unseen.len(), 3);
        let td = &unseen[2];
        let a: Vec<f64> = td.drive[0].iter().map(|v| v * 0.4).collect();
        let s0 = reset(td, 0);
        let s1 = step(td, &s0, &a).unwrap().next_state;
        let d_rot = s1.object[0] - s0.object[0];
        let d_trans = s1.object[1] - s0.object[1];
        assert!((d_trans + SCREW_COUPLING * d_rot).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_control_is_outside_basis() {
        let set = make_task_set(TaskSetId::A, 20, 0).unwrap();
        let basis = oracle_subspace(&set.tasks);
        let t = make_orthogonal_valve(&set.tasks[0], &basis, 1).unwrap();
        for row in basis.rows() {
            let c: f64 = row.iter().zip(&t.drive[0]).map(|(a, b)| a * b).sum();
            assert!(c.abs() < 1e-12);
        }
    }

    #[test]
    fn set_a_shares_one_reward_formula() {
        let set = make_task_set(TaskSetId::A, 20, 0).unwrap();
        let a: Vec<f64> = (0..20).map(|i| ((i * 7 % 11) as f64 / 11.0) - 0.5).collect();
        for t in &set.tasks {
            let s0 = reset(t, 0);
            let res = step(t, &s0, &a).unwrap();
            for other in &set.tasks {
                let swapped = reward(other, &s0.object, &res.next_state.object, &a);
                assert_eq!(swapped, res.reward);
            }
        }
    }

    #[test]
    fn drive_direction_reaches_return_bound() {
        for set_id in [TaskSetId::A, TaskSetId::B] {
            let set = make_task_set(set_id, 20, 0).unwrap();
            for t in &set.tasks {
                let beta = t.reward.action_penalty;
                let bound = 0.5 * t.horizon as f64 * t.joint_step * (1.0 - beta);
                let a: Vec<f64> = match t.kind {
                    TaskKind::Dice => {
                        // Constant action that reaches the goal at the horizon.
                        let s0 = reset(t, 0);
                        let delta: Vec<f64> =
                            t.reward.goal.iter().zip(&s0.object).map(|(g, o)| (g - o) / t.horizon as f64).collect();
                        (0..t.d).map(|j| (0..3).map(|r| delta[r] * t.drive[r][j]).sum()).collect()
                    }
                    TaskKind::Screw => t.drive[1].clone(),
                    _ => t.drive[0].clone(),
                };
                let mut s = reset(t, 0);
                let mut ret = 0.0;
                loop {
                    let r = step(t, &s, &a).unwrap();
                    ret += r.reward;
                    s = r.next_state;
                    if r.done {
                        break;
                    }
                }
                assert!(ret >= bound, "{}: return {ret} below {bound}", t.name);
            }
        }
    }

    #[test]
    fn task_set_json_roundtrip() {
        let set = make_task_set(TaskSetId::B, 20, 4).unwrap();
        let s = set.to_json_string();
        let back = TaskSet::from_json_str(&s).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.to_json_string(), s);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn joints_stay_bounded_and_runs_replay(
            seed in 0u64..1000,
            actions in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 20), 1..60),
            engaged in proptest::bool::ANY,
        ) {
            let opts = EnvOptions { engagement_on: engaged, ..EnvOptions::default() };
            let set = make_task_set_with(TaskSetId::B, 20, seed, &opts).unwrap();
            for t in &set.tasks {
                let run = || {
                    let mut s = reset(t, seed);
                    let mut trace = Vec::new();
                    for a in &actions {
                        let r = step(t, &s, a).unwrap();
                        trace.push((r.reward.to_bits(), r.next_state.object.clone()));
                        s = r.next_state;
                        if r.done { break; }
                    }
                    (s, trace)
                };
                let (s1, tr1) = run();
                let (s2, tr2) = run();
                prop_assert!(s1.joints.iter().all(|q| q.abs() <= JOINT_LIMIT));
                prop_assert_eq!(s1, s2);
                prop_assert_eq!(tr1, tr2);
            }
        }
    }
}
