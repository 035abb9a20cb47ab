//! A freshly initialised meta-policy looking at the scripted merge scene
//! under different preferences: the preference is an input, so the action
//! distribution moves with it even before training.
//!
//! ```text
//! cargo run --release --example policy_forward
//! ```

use gmrl::config::Config;
use gmrl::eval::probe::{probe_state, PROBED_AGENT};
use gmrl::nets::{EncodedObs, PolicyNet, SetBatch};
use gmrl::sim::{Intersection, PreferenceSampler};

fn main() -> anyhow::Result<()> {
    let cfg = Config::default();
    let net = PolicyNet::<f32>::meta(&cfg.network, 1)?;
    println!("meta network: {} heads, recurrent width {}", net.n_heads(), net.hidden_width());
    let hidden = vec![0.0; net.hidden_width()];
    for beta in [-1.0, 0.0, 1.0, 2.0, 3.0] {
        let env = Intersection::from_state(&cfg.scenario, PreferenceSampler::Fixed(beta), probe_state(&cfg.scenario, beta))?;
        let obs = EncodedObs::social(&env.observe(PROBED_AGENT)?)?;
        let batch = SetBatch::<f32>::new(&[&obs], &[&hidden], &[beta])?;
        let out = net.evaluate(&batch, &[0])?.outputs[0];
        println!(
            "beta {beta:>4.1}  p(stop, creep, cruise) = ({:.3}, {:.3}, {:.3})  value {:.3}",
            out.probs[0], out.probs[1], out.probs[2], out.value
        );
    }
    Ok(())
}
