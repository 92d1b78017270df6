//! Versioned binary checkpoints: the magic bytes `MBAE`, a little-endian
//! `u32` format version, a `u32` section count, then named sections. Each
//! section is a `u32` name length, the UTF-8 name, a kind byte (0 for an
//! `f64` array, 1 for raw bytes), a `u64` element count and the payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::{replay::Experience, RunRecord, TrainConfig, Trainer, Window};
use crate::diffcore::Network;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MBAE";
pub const VERSION: u32 = 1;

enum Section {
    Floats(Vec<f64>),
    Bytes(Vec<u8>),
}

fn encode(sections: &[(&str, Section)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (name, section) in sections {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        match section {
            Section::Floats(v) => {
                out.push(0);
                out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
            Section::Bytes(b) => {
                out.push(1);
                out.extend_from_slice(&(b.len() as u64).to_le_bytes());
                out.extend_from_slice(b);
            }
        }
    }
    out
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn decode(data: &[u8]) -> Result<BTreeMap<String, Section>> {
    let mut r = Reader { data, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let count = r.u32()?;
    let mut sections = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("section name is not UTF-8".into()))?;
        let kind = r.take(1)?[0];
        let n = usize::try_from(r.u64()?).map_err(|_| Error::Format("section too large".into()))?;
        let section = match kind {
            0 => {
                let bytes = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("section too large".into()))?)?;
                Section::Floats(
                    bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                )
            }
            1 => Section::Bytes(r.take(n)?.to_vec()),
            k => return Err(Error::Format(format!("unknown section kind {k}"))),
        };
        sections.insert(name, section);
    }
    if r.pos != data.len() {
        return Err(Error::Format("trailing bytes after last section".into()));
    }
    Ok(sections)
}

fn rng_bytes(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = rng.get_seed().to_vec();
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out
}

fn rng_from_bytes(b: &[u8]) -> Result<ChaCha8Rng> {
    use rand::SeedableRng;
    if b.len() != 56 {
        return Err(Error::Format("RNG section must hold 56 bytes".into()));
    }
    let mut rng = ChaCha8Rng::from_seed(b[..32].try_into().expect("32 bytes"));
    rng.set_stream(u64::from_le_bytes(b[32..40].try_into().expect("8 bytes")));
    rng.set_word_pos(u128::from_le_bytes(b[40..56].try_into().expect("16 bytes")));
    Ok(rng)
}

struct Sections(BTreeMap<String, Section>);

impl Sections {
    fn floats(&self, name: &str) -> Result<&[f64]> {
        match self.0.get(name) {
            Some(Section::Floats(v)) => Ok(v),
            Some(Section::Bytes(_)) => Err(Error::Format(format!("section {name} has the wrong kind"))),
            None => Err(Error::Format(format!("missing section {name}"))),
        }
    }

    fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.0.get(name) {
            Some(Section::Bytes(v)) => Ok(v),
            Some(Section::Floats(_)) => Err(Error::Format(format!("section {name} has the wrong kind"))),
            None => Err(Error::Format(format!("missing section {name}"))),
        }
    }
}

fn set_params(net: &mut Network, flat: &[f64], name: &str) -> Result<()> {
    net.set_flat_params(flat)
        .map_err(|_| Error::Format(format!("section {name} does not match the network shape")))
}

fn format_err(name: &str) -> impl Fn(Error) -> Error + '_ {
    move |_| Error::Format(format!("section {name} does not match the configuration"))
}

impl Trainer {
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let config = toml::to_string(&self.cfg).map_err(|e| Error::Format(format!("config: {e}")))?;
        let mut records = Vec::with_capacity(self.records.len() * 12);
        self.records.iter().for_each(|r| records.extend(r.to_array()));
        let mut buffer = Vec::new();
        for e in self.buffer.iter() {
            buffer.extend_from_slice(&e.state);
            buffer.extend_from_slice(&e.action);
            buffer.push(e.reward);
            buffer.extend_from_slice(&e.next_state);
            buffer.push(if e.terminal { 1.0 } else { 0.0 });
        }
        let [g, d, r] = self.dynamics.optimizers();
        let sections = vec![
            ("config", Section::Bytes(config.into_bytes())),
            ("rng.train", Section::Bytes(rng_bytes(&self.rng))),
            ("rng.eval", Section::Bytes(rng_bytes(&self.eval_rng))),
            ("rng.model", Section::Bytes(rng_bytes(&self.model_rng))),
            (
                "counters",
                Section::Floats(vec![self.episode as f64, self.env_steps as f64, self.max_abs_value]),
            ),
            ("window", Section::Floats(self.window.to_array().to_vec())),
            ("records", Section::Floats(records)),
            ("buffer", Section::Floats(buffer)),
            ("value.params", Section::Floats(self.value.network().flat_params())),
            ("value.optim", Section::Floats(self.value.optimizer().state())),
            ("policy.params", Section::Floats(self.policy.network().flat_params())),
            ("policy.optim", Section::Floats(self.policy.optimizer().state())),
            ("generator.params", Section::Floats(self.dynamics.generator().flat_params())),
            ("generator.optim", Section::Floats(g.state())),
            ("discriminator.params", Section::Floats(self.dynamics.discriminator().flat_params())),
            ("discriminator.optim", Section::Floats(d.state())),
            ("reward.params", Section::Floats(self.dynamics.reward_net().flat_params())),
            ("reward.optim", Section::Floats(r.state())),
        ];
        Ok(encode(&sections))
    }

    /// Rebuilds a trainer from [`Trainer::to_checkpoint_bytes`] output. The
    /// whole input is validated before a trainer is returned.
    pub fn from_checkpoint_bytes(data: &[u8]) -> Result<Self> {
        let s = Sections(decode(data)?);
        let config = std::str::from_utf8(s.bytes("config")?)
            .map_err(|_| Error::Format("config section is not UTF-8".into()))?;
        let cfg: TrainConfig = toml::from_str(config).map_err(|e| Error::Format(format!("config: {e}")))?;
        let mut t = Trainer::new(cfg)?;
        t.rng = rng_from_bytes(s.bytes("rng.train")?)?;
        t.eval_rng = rng_from_bytes(s.bytes("rng.eval")?)?;
        t.model_rng = rng_from_bytes(s.bytes("rng.model")?)?;

        let counters = s.floats("counters")?;
        if counters.len() != 3 {
            return Err(Error::Format("counters section must hold 3 values".into()));
        }
        t.episode = counters[0] as usize;
        t.env_steps = counters[1] as u64;
        t.max_abs_value = counters[2];

        let window = s.floats("window")?;
        if window.len() != Window::LEN {
            return Err(Error::Format("window section has the wrong length".into()));
        }
        t.window = Window::from_array(window);

        let records = s.floats("records")?;
        if records.len() % RunRecord::FIELDS.len() != 0 {
            return Err(Error::Format("records section has the wrong length".into()));
        }
        t.records = records
            .chunks_exact(RunRecord::FIELDS.len())
            .map(RunRecord::from_array)
            .collect();

        let obs = t.cfg.env.observation_width();
        let act = t.cfg.env.dim;
        let stride = 2 * obs + act + 2;
        let buffer = s.floats("buffer")?;
        if buffer.len() % stride != 0 || buffer.len() / stride > t.cfg.buffer_capacity {
            return Err(Error::Format("buffer section has the wrong length".into()));
        }
        for row in buffer.chunks_exact(stride) {
            t.buffer.push(Experience {
                state: row[..obs].to_vec(),
                action: row[obs..obs + act].to_vec(),
                reward: row[obs + act],
                next_state: row[obs + act + 1..2 * obs + act + 1].to_vec(),
                terminal: row[stride - 1] != 0.0,
            });
        }

        set_params(t.value.network_mut(), s.floats("value.params")?, "value.params")?;
        t.value
            .optimizer_mut()
            .set_state(s.floats("value.optim")?)
            .map_err(format_err("value.optim"))?;
        set_params(t.policy.network_mut(), s.floats("policy.params")?, "policy.params")?;
        t.policy
            .optimizer_mut()
            .set_state(s.floats("policy.optim")?)
            .map_err(format_err("policy.optim"))?;
        set_params(t.dynamics.generator_mut(), s.floats("generator.params")?, "generator.params")?;
        set_params(
            t.dynamics.discriminator_mut(),
            s.floats("discriminator.params")?,
            "discriminator.params",
        )?;
        set_params(t.dynamics.reward_net_mut(), s.floats("reward.params")?, "reward.params")?;
        let names = ["generator.optim", "discriminator.optim", "reward.optim"];
        for (opt, name) in t.dynamics.optimizers_mut().into_iter().zip(names) {
            opt.set_state(s.floats(name)?).map_err(format_err(name))?;
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_bytes(&fs::read(path)?)
    }
}
