//! Versioned binary checkpoints: a JSON header (layer sizes, quantile
//! count, normalization constants) followed by raw little-endian `f64`
//! parameters for the actor and critic.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use super::nn::{DenseNet, OutputActivation};
use super::StateNorm;
use crate::error::{Error, Result};
use crate::strategies::RlPolicy;

const MAGIC: &[u8; 4] = b"ACKP";
const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    actor_sizes: Vec<usize>,
    critic_sizes: Vec<usize>,
    norm: StateNorm,
}

pub fn write_checkpoint<W: Write>(w: &mut W, policy: &RlPolicy, critic: &DenseNet) -> Result<()> {
    let header = Header {
        actor_sizes: policy.actor.sizes().to_vec(),
        critic_sizes: critic.sizes().to_vec(),
        norm: policy.norm.clone(),
    };
    let header_bytes = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for p in policy.actor.params_flat().iter().chain(&critic.params_flat()) {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(RlPolicy, DenseNet)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let mut ver = [0u8; 2];
    r.read_exact(&mut ver)?;
    let version = u16::from_le_bytes(ver);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut header_bytes = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header_bytes)?;
    let header: Header =
        serde_json::from_slice(&header_bytes).map_err(|e| Error::Format(e.to_string()))?;

    let mut seed_rng = rand_chacha::ChaCha12Rng::seed_from_u64(0);
    use rand::SeedableRng;
    let mut actor = DenseNet::new(&header.actor_sizes, OutputActivation::Sigmoid, &mut seed_rng);
    let mut critic = DenseNet::new(&header.critic_sizes, OutputActivation::Linear, &mut seed_rng);
    let mut read_params = |n: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            out.push(f64::from_le_bytes(buf));
        }
        Ok(out)
    };
    actor.set_params_flat(&read_params(actor.param_count())?)?;
    critic.set_params_flat(&read_params(critic.param_count())?)?;
    Ok((
        RlPolicy {
            actor,
            norm: header.norm,
        },
        critic,
    ))
}

pub fn save_checkpoint(path: &Path, policy: &RlPolicy, critic: &DenseNet) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut file, policy, critic)
}

pub fn load_checkpoint(path: &Path) -> Result<(RlPolicy, DenseNet)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn checkpoint_round_trips() {
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        let actor = DenseNet::new(&[5, 8, 1], OutputActivation::Sigmoid, &mut rng);
        let critic = DenseNet::new(&[6, 8, 10], OutputActivation::Linear, &mut rng);
        let policy = RlPolicy {
            actor,
            norm: StateNorm {
                initial_prices: vec![382.0, 494.0, 142.0],
                notional: 100.0,
                call_freq: 4.0,
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.ackp");
        save_checkpoint(&path, &policy, &critic).unwrap();
        let (loaded_policy, loaded_critic) = load_checkpoint(&path).unwrap();
        assert_eq!(policy.actor, loaded_policy.actor);
        assert_eq!(policy.norm, loaded_policy.norm);
        assert_eq!(critic, loaded_critic);

        std::fs::write(&path, b"garbage").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
