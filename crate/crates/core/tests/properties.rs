use carfollow::baselines::{IdmParams, LoessModel, NnaModel, RnnModel, DEFAULT_SPAN, IDM_BOUNDS};
use carfollow::data::{generate_synthetic_driver, Style, SynthConfig};
use carfollow::ddpg::{DdpgModel, RewardMode, TrainConfig};
use carfollow::kinematics::{run_episode, CarFollowingModel, CfState, DEFAULT_DT, MAX_ACCEL};
use proptest::prelude::*;
use std::sync::OnceLock;

struct Zoo {
    models: Vec<(&'static str, Box<dyn CarFollowingModel>)>,
    periods: Vec<carfollow::data::CfPeriod>,
}

fn zoo() -> &'static Zoo {
    static ZOO: OnceLock<Zoo> = OnceLock::new();
    ZOO.get_or_init(|| {
        let ds = generate_synthetic_driver(&SynthConfig::default(), Style::Aggressive, 3, 5, "d01")
            .unwrap();
        let idm = IdmParams::from_array(IDM_BOUNDS.map(|(lo, hi)| 0.5 * (lo + hi)));
        let loess = LoessModel::fit(&ds.periods, DEFAULT_SPAN).unwrap();
        let mut rt = TrainConfig::preset(RewardMode::Speed, true);
        rt.episodes = 1;
        let ddpg = DdpgModel::new(rt, 3).unwrap().actor_model();
        let models: Vec<(&'static str, Box<dyn CarFollowingModel>)> = vec![
            ("idm", Box::new(idm)),
            ("loess", Box::new(loess)),
            ("nna", Box::new(NnaModel::init(30, 1).unwrap())),
            ("rnn", Box::new(RnnModel::init(60, 2))),
            ("ddpg", Box::new(ddpg)),
        ];
        Zoo {
            models,
            periods: ds.periods,
        }
    })
}

fn state() -> impl Strategy<Value = CfState> {
    (0.0..40.0f64, -15.0..15.0f64, 0.1..150.0f64).prop_map(|(v, dv, gap)| CfState::new(v, dv, gap))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_model_keeps_actions_within_limits(states in prop::collection::vec(state(), 1..30)) {
        let z = zoo();
        for (name, m) in &z.models {
            let mut p = m.policy_for(&z.periods[0]);
            p.reset(&states[0]);
            for s in &states {
                let a = p.act(s);
                prop_assert!(a.is_finite() && a.abs() <= MAX_ACCEL, "{name}: {a}");
            }
        }
    }

    #[test]
    fn rollouts_never_go_backwards(k in 0usize..3) {
        let z = zoo();
        let period = &z.periods[k];
        for (name, m) in &z.models {
            let mut p = m.policy_for(period);
            let traj = run_episode(&mut *p, period, DEFAULT_DT).unwrap();
            prop_assert!(traj.speeds().iter().all(|v| *v >= 0.0), "{name}");
            prop_assert!(traj.gaps().len() <= period.len());
        }
    }
}
