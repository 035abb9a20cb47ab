//! The simulator against independent models of its transition and reward.

mod common;

use common::{audit_transitions, guided_fraction, idm_failures, reward_mismatches};
use gmrl::config::{Config, ScenarioConfig};
use gmrl::sim::{ActionIndex, Intersection, PreferenceSampler};
use proptest::prelude::*;

#[test]
fn transitions_follow_kinematics_and_rate_limit() {
    let audit = audit_transitions(&ScenarioConfig::default(), 2_000, 1);
    assert!(audit.checked > 10_000);
    assert!(audit.max_position_error <= 1e-12, "{audit:?}");
    assert!(audit.max_rate_excess <= 1e-12, "{audit:?}");
    assert!(audit.max_speed_error <= 1e-12, "{audit:?}");
}

#[test]
fn rewards_match_the_oracle_bit_for_bit() {
    let (checked, bad) = reward_mismatches(&ScenarioConfig::default(), 1_000, 2);
    assert!(checked >= 7_000);
    assert_eq!(bad, 0);
}

#[test]
fn about_a_fifth_of_spawns_are_guided() {
    let (fraction, n) = guided_fraction(&Config::default(), 20_000, 3);
    assert!(n >= 20_000);
    assert!((fraction - 0.2).abs() < 0.015, "{fraction}");
}

#[test]
fn rule_based_traffic_is_collision_free() {
    assert_eq!(idm_failures(&Config::default(), 50, 4), 0);
}

#[test]
fn documented_step_examples() {
    let cfg = ScenarioConfig { n_social_per_lane: 1, ..ScenarioConfig::default() };
    let mut env = Intersection::spawn_seeded(&cfg, PreferenceSampler::Fixed(0.0), 0).unwrap();
    // the ego starts at rest; one cruise step reaches max_accel·dt
    let out = env.step(&[ActionIndex::CRUISE, ActionIndex::CRUISE, ActionIndex::CRUISE]).unwrap();
    assert!((out.next_state.ego.velocity_y - 0.4).abs() < 1e-12);
    assert_eq!(out.next_state.ego.position_y, cfg.ego_start_y);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn speeds_stay_in_range_and_tangent(seed in any::<u64>(), picks in proptest::collection::vec(0usize..3, 60)) {
        let cfg = ScenarioConfig::default();
        let mut env = Intersection::spawn_seeded(&cfg, PreferenceSampler::Uniform { lo: -1.0, hi: 3.0 }, seed).unwrap();
        for (k, &p) in picks.iter().enumerate() {
            if env.is_done() {
                break;
            }
            let actions: Vec<ActionIndex> =
                (0..env.n_agents()).map(|a| ActionIndex::new((p + a + k) % 3).unwrap()).collect();
            let out = env.step(&actions).unwrap();
            for a in 0..env.n_agents() {
                let v = out.next_state.vehicle(a);
                let speed = v.speed();
                prop_assert!((0.0..=3.0 + 1e-12).contains(&speed));
                if speed > 1e-9 {
                    let t = env.geometry().track(v.lane).tangent(v.track_progress);
                    let cross = v.velocity_x * t[1] - v.velocity_y * t[0];
                    prop_assert!(cross.abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn spawning_is_deterministic(seed in any::<u64>()) {
        let cfg = ScenarioConfig::default();
        let sampler = PreferenceSampler::Uniform { lo: -3.0, hi: 3.0 };
        let a = Intersection::spawn_seeded(&cfg, sampler.clone(), seed).unwrap();
        let b = Intersection::spawn_seeded(&cfg, sampler, seed).unwrap();
        prop_assert_eq!(a.state().ego, b.state().ego);
        prop_assert_eq!(&a.state().social, &b.state().social);
    }
}
