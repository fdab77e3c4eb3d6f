//! Binary parameter dump.
//!
//! Layout (little endian): magic `SVCK`, `u32` version, `u32` network count,
//! then per network a length-prefixed UTF-8 name, `u32` layer count and per
//! layer `u32 in`, `u32 out`, `u8 activation`, weights and biases as `f64`.
//! Finally `u32` scalar count and `(name, f64)` pairs. Values are stored as
//! raw bits so a load reproduces them exactly.

use std::io::{Read, Write};
use std::path::Path;

use super::mlp::{Activation, Layer, Mlp};
use super::NnError;

const MAGIC: &[u8; 4] = b"SVCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub nets: Vec<(String, Mlp)>,
    pub scalars: Vec<(String, f64)>,
}

fn put_u32(w: &mut impl Write, x: u32) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn put_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn get_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Result<String, NnError> {
    let n = get_u32(r)? as usize;
    if n > 1 << 16 {
        return Err(NnError::Checkpoint(format!("name length {n} too large")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| NnError::Checkpoint(e.to_string()))
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Mlp> {
        self.nets.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find(|(n, _)| n == name).map(|&(_, x)| x)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), NnError> {
        w.write_all(MAGIC)?;
        put_u32(w, VERSION)?;
        put_u32(w, self.nets.len() as u32)?;
        for (name, net) in &self.nets {
            put_str(w, name)?;
            put_u32(w, net.layers().len() as u32)?;
            for l in net.layers() {
                put_u32(w, l.in_dim as u32)?;
                put_u32(w, l.out_dim as u32)?;
                w.write_all(&[l.activation.code()])?;
                for x in l.weights.iter().chain(&l.bias) {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        put_u32(w, self.scalars.len() as u32)?;
        for (name, x) in &self.scalars {
            put_str(w, name)?;
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, NnError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let n_nets = get_u32(r)?;
        let mut nets = Vec::new();
        for _ in 0..n_nets {
            let name = get_str(r)?;
            let n_layers = get_u32(r)?;
            let mut layers = Vec::new();
            for _ in 0..n_layers {
                let in_dim = get_u32(r)? as usize;
                let out_dim = get_u32(r)? as usize;
                let mut code = [0u8; 1];
                r.read_exact(&mut code)?;
                let activation = Activation::from_code(code[0])
                    .ok_or_else(|| NnError::Checkpoint(format!("unknown activation {}", code[0])))?;
                if in_dim.saturating_mul(out_dim) > 1 << 26 {
                    return Err(NnError::Checkpoint("layer too large".into()));
                }
                let mut layer = Layer::zeros(in_dim, out_dim, activation);
                for x in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                    *x = get_f64(r)?;
                }
                layers.push(layer);
            }
            nets.push((name, Mlp::from_layers(layers)?));
        }
        let n_scalars = get_u32(r)?;
        let mut scalars = Vec::new();
        for _ in 0..n_scalars {
            let name = get_str(r)?;
            scalars.push((name, get_f64(r)?));
        }
        Ok(Checkpoint { nets, scalars })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }
}
