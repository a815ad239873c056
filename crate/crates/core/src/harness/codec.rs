//! Binary container for knowledge artifacts.
//!
//! Layout (little-endian): magic `CARK`, version `u32`, knowledge kind `u8`,
//! the state/action spaces, then one section per component. Network
//! components embed the plain network format.

use std::path::Path;

use crate::error::{Error, Result};
use crate::knowledge::{
    Knowledge, NetworkPolicy, NetworkQ, Policy, PolicyFamily, QFunction, QTable, TabularPolicy,
};
use crate::mdp::{ActionSpec, Spaces};
use crate::nn::io::{self, Reader};

const MAGIC: &[u8; 4] = b"CARK";
const VERSION: u32 = 1;

pub fn encode_spaces(spaces: &Spaces, out: &mut Vec<u8>) {
    out.extend_from_slice(&(spaces.state_dim as u32).to_le_bytes());
    match &spaces.action {
        ActionSpec::Discrete(n) => {
            out.push(0);
            out.extend_from_slice(&(*n as u32).to_le_bytes());
        }
        ActionSpec::ContinuousBox { lo, hi } => {
            out.push(1);
            out.extend_from_slice(&(lo.len() as u32).to_le_bytes());
            for v in lo.iter().chain(hi) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

pub fn decode_spaces(r: &mut Reader<'_>) -> Result<Spaces> {
    let state_dim = r.u32()? as usize;
    let action = match r.u8()? {
        0 => ActionSpec::Discrete(r.u32()? as usize),
        1 => {
            let d = r.u32()? as usize;
            let lo = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let hi = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            ActionSpec::continuous(lo, hi)?
        }
        t => return Err(Error::Data(format!("unknown action space tag {t}"))),
    };
    Ok(Spaces { state_dim, action })
}

fn encode_policy(p: &Policy, out: &mut Vec<u8>) {
    match p {
        Policy::Tabular(t) => {
            out.push(0);
            out.extend_from_slice(&(t.actions.len() as u32).to_le_bytes());
            for a in &t.actions {
                out.extend_from_slice(&(*a as u32).to_le_bytes());
            }
        }
        Policy::Network(n) => {
            out.push(1);
            out.push(match n.family {
                PolicyFamily::SoftmaxDiscrete => 0,
                PolicyFamily::DiagonalGaussian => 1,
            });
            io::encode(&n.net, out);
        }
    }
}

fn decode_policy(r: &mut Reader<'_>, spaces: &Spaces) -> Result<Policy> {
    match r.u8()? {
        0 => {
            let n = r.u32()? as usize;
            let actions = (0..n)
                .map(|_| Ok(r.u32()? as usize))
                .collect::<Result<Vec<_>>>()?;
            let limit = spaces.action.num_actions().unwrap_or(0);
            if n != spaces.state_dim || actions.iter().any(|&a| a >= limit) {
                return Err(Error::Data("tabular policy does not fit its spaces".into()));
            }
            Ok(Policy::Tabular(TabularPolicy {
                actions,
                spaces: spaces.clone(),
            }))
        }
        1 => {
            let family = match r.u8()? {
                0 => PolicyFamily::SoftmaxDiscrete,
                1 => PolicyFamily::DiagonalGaussian,
                t => return Err(Error::Data(format!("unknown policy family {t}"))),
            };
            let net = io::decode(r)?;
            Ok(Policy::Network(NetworkPolicy::from_net(
                net,
                family,
                spaces.clone(),
            )?))
        }
        t => Err(Error::Data(format!("unknown policy tag {t}"))),
    }
}

fn encode_q(q: &QFunction, out: &mut Vec<u8>) {
    match q {
        QFunction::Tabular(t) => {
            out.push(0);
            out.extend_from_slice(&(t.n_states as u32).to_le_bytes());
            out.extend_from_slice(&(t.n_actions as u32).to_le_bytes());
            out.extend_from_slice(&t.gamma.to_le_bytes());
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        QFunction::Network(n) => {
            out.push(1);
            io::encode(&n.net, out);
        }
    }
}

fn decode_q(r: &mut Reader<'_>, spaces: &Spaces) -> Result<QFunction> {
    match r.u8()? {
        0 => {
            let n_states = r.u32()? as usize;
            let n_actions = r.u32()? as usize;
            let gamma = r.f64()?;
            let mut t = QTable::zeros(spaces.clone(), gamma)?;
            if t.n_states != n_states || t.n_actions != n_actions {
                return Err(Error::Data("Q table does not fit its spaces".into()));
            }
            for v in t.values.iter_mut() {
                *v = r.f64()?;
            }
            Ok(QFunction::Tabular(t))
        }
        1 => Ok(QFunction::Network(NetworkQ::from_net(
            io::decode(r)?,
            spaces.clone(),
        )?)),
        t => Err(Error::Data(format!("unknown Q-function tag {t}"))),
    }
}

pub fn knowledge_to_bytes(k: &Knowledge) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    match k {
        Knowledge::Policy(p) => {
            out.push(0);
            encode_spaces(p.spaces(), &mut out);
            encode_policy(p, &mut out);
        }
        Knowledge::Value(q) => {
            out.push(1);
            encode_spaces(q.spaces(), &mut out);
            encode_q(q, &mut out);
        }
        Knowledge::ActorCritic { actor, critic } => {
            out.push(2);
            encode_spaces(actor.spaces(), &mut out);
            encode_policy(actor, &mut out);
            encode_q(critic, &mut out);
        }
    }
    out
}

pub fn knowledge_from_bytes(bytes: &[u8]) -> Result<Knowledge> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Data("not a knowledge file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!(
            "unsupported knowledge version {version}"
        )));
    }
    let kind = r.u8()?;
    let spaces = decode_spaces(&mut r)?;
    let k = match kind {
        0 => Knowledge::Policy(decode_policy(&mut r, &spaces)?),
        1 => Knowledge::Value(decode_q(&mut r, &spaces)?),
        2 => {
            let actor = decode_policy(&mut r, &spaces)?;
            let critic = decode_q(&mut r, &spaces)?;
            Knowledge::ActorCritic { actor, critic }
        }
        t => return Err(Error::Data(format!("unknown knowledge kind {t}"))),
    };
    if !r.is_empty() {
        return Err(Error::Data("trailing bytes after knowledge".into()));
    }
    Ok(k)
}

pub fn read_knowledge(path: &Path) -> Result<Knowledge> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    knowledge_from_bytes(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
