//! Binary cache format for [`ChannelRealization`].
//!
//! Little-endian throughout:
//!
//! ```text
//! magic      8 bytes  "BSCHAN01"
//! version    u32      1
//! K, M, L, N_T        u64 each
//! f_c                 f64
//! f_m                 M x f64
//! paths               K*L x (doa, gain.re, gain.im, delay) f64
//! spatial DoAs        K*M*L x f64, row-major (k, m, l)
//! channels            K*M*N_T x (re, im) f64, row-major (k, m, n)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ChannelRealization, PhysicalPath};
use crate::{CVector, Error, Result, C64};

const MAGIC: &[u8; 8] = b"BSCHAN01";
const VERSION: u32 = 1;
// Guards allocation when reading untrusted headers.
const MAX_ELEMENTS: u64 = 1 << 32;

impl ChannelRealization {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for dim in [
            self.num_users,
            self.num_subcarriers(),
            self.num_paths,
            self.num_antennas,
        ] {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        put_f64(&mut w, self.carrier_freq_hz)?;
        for &f in &self.subcarrier_freqs {
            put_f64(&mut w, f)?;
        }
        for p in &self.paths {
            for v in [p.physical_doa, p.gain.re, p.gain.im, p.delay_s] {
                put_f64(&mut w, v)?;
            }
        }
        for &t in &self.spatial_doas {
            put_f64(&mut w, t)?;
        }
        for h in &self.channels {
            for v in h.iter() {
                put_f64(&mut w, v.re)?;
                put_f64(&mut w, v.im)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a channel realization file".into()));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let version = u32::from_le_bytes(buf4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut dims = [0u64; 4];
        for d in dims.iter_mut() {
            *d = get_u64(&mut r)?;
        }
        let [k, m, l, n_t] = dims;
        let total = k
            .checked_mul(m)
            .and_then(|x| x.checked_mul(n_t.max(l)))
            .filter(|&x| x <= MAX_ELEMENTS)
            .ok_or_else(|| Error::Format("dimensions too large".into()))?;
        if total == 0 {
            return Err(Error::Format("zero-sized dimension".into()));
        }
        let (k, m, l, n_t) = (k as usize, m as usize, l as usize, n_t as usize);

        let carrier = get_f64(&mut r)?;
        let freqs = (0..m).map(|_| get_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut paths = Vec::with_capacity(k * l);
        for _ in 0..k * l {
            let doa = get_f64(&mut r)?;
            let gain = C64::new(get_f64(&mut r)?, get_f64(&mut r)?);
            let delay = get_f64(&mut r)?;
            paths.push(PhysicalPath::new(doa, gain, delay).map_err(|e| Error::Format(e.to_string()))?);
        }
        let spatial = (0..k * m * l)
            .map(|_| get_f64(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let mut channels = Vec::with_capacity(k * m);
        for _ in 0..k * m {
            let mut h = CVector::zeros(n_t);
            for v in h.iter_mut() {
                *v = C64::new(get_f64(&mut r)?, get_f64(&mut r)?);
            }
            channels.push(h);
        }
        let realization = Self {
            carrier_freq_hz: carrier,
            subcarrier_freqs: freqs,
            num_antennas: n_t,
            num_users: k,
            num_paths: l,
            channels,
            paths,
            spatial_doas: spatial,
        };
        realization.check_spatial_consistency()?;
        Ok(realization)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    fn check_spatial_consistency(&self) -> Result<()> {
        for k in 0..self.num_users {
            for (m, &f_m) in self.subcarrier_freqs.iter().enumerate() {
                for (l, p) in self.paths(k).iter().enumerate() {
                    let expected = f_m / self.carrier_freq_hz * p.physical_doa;
                    if self.spatial_doa(k, m, l) != expected {
                        return Err(Error::Format(format!(
                            "spatial DoA ({k}, {m}, {l}) inconsistent with its physical DoA"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
