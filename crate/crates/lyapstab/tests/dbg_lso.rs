use std::time::Instant;

use lyapstab::envs::{env_reset, env_step, make_env, Env};
use lyapstab::expert::{collect_trajectories, ExpertController};
use lyapstab::lyapunov::{train_proxy, Landscape, LrSchedule, ProxyTrainConfig};
use lyapstab::numkit::rng_stream;
use lyapstab::policyopt::{
    train_policy, LandscapeReward, PpoConfig, EVAL_SEED_BASE,
};
use lyapstab::reward::RewardConfig;
use rand::Rng;

fn expert_return(env: &dyn Env, episodes: usize) -> f64 {
    let ctrl = ExpertController::for_env(env).unwrap();
    let mut total = 0.0;
    for ep in 0..episodes {
        let mut state = env_reset(env, EVAL_SEED_BASE + ep as u64);
        loop {
            let u = ctrl.action(env, &state.x).unwrap();
            let u = env.spec().clamp_action(&u);
            let out = env_step(env, &state, &u).unwrap();
            total += env.task_reward(&state.x, &u);
            if out.truncated {
                break;
            }
            state = out.state;
        }
    }
    total / episodes as f64
}

fn random_return(env: &dyn Env, episodes: usize) -> f64 {
    let spec = env.spec();
    let mut rng = rng_stream(123, 99);
    let mut total = 0.0;
    for ep in 0..episodes {
        let mut state = env_reset(env, EVAL_SEED_BASE + ep as u64);
        loop {
            let u: Vec<f64> = spec
                .action_low
                .iter()
                .zip(&spec.action_high)
                .map(|(&lo, &hi)| rng.random_range(lo..hi))
                .collect();
            let out = env_step(env, &state, &u).unwrap();
            total += env.task_reward(&state.x, &u);
            if out.truncated {
                break;
            }
            state = out.state;
        }
    }
    total / episodes as f64
}

#[test]
fn dbg_car_lso_end_to_end() {
    let env = make_env("car").unwrap();
    let r_exp = expert_return(env.as_ref(), 10);
    let r_rand = random_return(env.as_ref(), 10);
    println!("expert {r_exp:.3} random {r_rand:.3}");

    let trajs = collect_trajectories(env.as_ref(), 10, 0, 0).unwrap();
    let pcfg = ProxyTrainConfig {
        epochs: 12000,
        lr: 5e-4,
        batch_size: 32,
        lr_schedule: LrSchedule::CosineToZero,
        ..Default::default()
    };
    let t0 = Instant::now();
    let (model, report) = train_proxy(&trajs, &pcfg).unwrap();
    println!(
        "proxy in {:?}: mean_lie {:.3} frac_pos {:.3}",
        t0.elapsed(),
        report.mean_lie,
        report.frac_positive
    );
    {
        use lyapstab::lyapunov::StateValue;
        let mut line = String::from("V along d_e: ");
        for i in 0..=6 {
            let d = i as f64 * 0.5;
            line.push_str(&format!("{:.2}@{d} ", model.value(&[0.0, 0.0, d]).unwrap()));
        }
        println!("{line}");
        let mut line = String::from("V along -d_e: ");
        for i in 0..=6 {
            let d = -(i as f64) * 0.5;
            line.push_str(&format!("{:.2}@{d} ", model.value(&[0.0, 0.0, d]).unwrap()));
        }
        println!("{line}");
        let mut line = String::from("V along sp: ");
        for i in 0..=6 {
            let sp = -0.9 + i as f64 * 0.3;
            line.push_str(&format!("{:.2}@{sp:.1} ", model.value(&[sp, 0.0, 0.0]).unwrap()));
        }
        println!("{line}");
    }
    let landscape = Landscape::Learned(model);
    let reward = LandscapeReward {
        v: &landscape,
        cfg: RewardConfig::default_for("car"),
    };
    let cfg = PpoConfig::default();
    let t1 = Instant::now();
    let (_, records) = train_policy(env.as_ref(), &reward, &cfg, 120, 0).unwrap();
    println!("ppo 120 iters in {:?}", t1.elapsed());
    for r in records.iter().step_by(10) {
        let score = (r.mean_eval_return - r_rand) / (r_exp - r_rand);
        println!(
            "it {:3} eval {:9.3} score {:6.3} ool {:5} kl {:7.4} clip {:5.3}",
            r.iteration, r.mean_eval_return, score, r.out_of_landscape, r.kl, r.clip_frac
        );
    }
    let final5: f64 = records[records.len() - 5..]
        .iter()
        .map(|r| r.mean_eval_return)
        .sum::<f64>()
        / 5.0;
    let score = (final5 - r_rand) / (r_exp - r_rand);
    println!("final5 eval {final5:.3} score {score:.3}");
}
