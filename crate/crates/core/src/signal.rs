//! Pilot/combiner configuration and the noisy observation
//! `y[n,k] = W_kᴴ H[n,k] f[n,k] + n[n,k]`, with `n ~ CN(0, N0·I)` added after
//! combining.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::{channel_response, ArrayGeometry, GridConfig, PathParams};
use crate::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-10;

/// How per-subcarrier precoders are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PilotKind {
    /// Same unit-modulus vector on every (n,k).
    Uniform,
    /// Independent unit-modulus random phases per entry, drawn from the seed.
    RandomPhase,
}

/// How the per-symbol analog combiners are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombinerKind {
    /// `W_k = I` (one RF chain per element).
    Full,
    /// Random orthonormal `N_rx × m_rx` beams per symbol, drawn from the seed.
    RandomBeams { m_rx: usize },
}

/// Known transmit signals and receive combiners for one link.
#[derive(Debug, Clone, PartialEq)]
pub struct TxRxConfig {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    /// `f[n,k]` at index `n·K + k`.
    pub precoders: Vec<DVector<Complex64>>,
    /// `W_k`, `N_rx × M_rx`.
    pub combiners: Vec<DMatrix<Complex64>>,
    /// Average transmit power, W.
    pub tx_power: f64,
    /// Noise power spectral density, W/Hz.
    pub noise_psd: f64,
}

impl TxRxConfig {
    /// Validated constructor.
    pub fn new(
        grid: &GridConfig,
        precoders: Vec<DVector<Complex64>>,
        combiners: Vec<DMatrix<Complex64>>,
        tx_power: f64,
        noise_psd: f64,
    ) -> Result<Self> {
        let cfg = Self {
            n_subcarriers: grid.n_subcarriers,
            n_symbols: grid.n_symbols,
            precoders,
            combiners,
            tx_power,
            noise_psd,
        };
        cfg.validate(grid)?;
        Ok(cfg)
    }

    /// Single antenna at both ends, `f = √(P_tx/W)`, `W_k = 1`.
    pub fn siso(grid: &GridConfig, tx_power: f64, noise_psd: f64) -> Result<Self> {
        Self::with_pilots(grid, 1, 1, tx_power, noise_psd, PilotKind::Uniform, CombinerKind::Full, 0)
    }

    /// Unit-modulus pilots scaled so `‖f‖² = P_tx/W` on every (n,k).
    #[allow(clippy::too_many_arguments)]
    pub fn with_pilots(
        grid: &GridConfig,
        n_tx: usize,
        n_rx: usize,
        tx_power: f64,
        noise_psd: f64,
        pilots: PilotKind,
        combiner: CombinerKind,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp = (tx_power / grid.bandwidth() / n_tx as f64).sqrt();
        let count = grid.n_subcarriers * grid.n_symbols;
        let precoders = match pilots {
            PilotKind::Uniform => vec![DVector::from_element(n_tx, Complex64::new(amp, 0.0)); count],
            PilotKind::RandomPhase => (0..count)
                .map(|_| {
                    DVector::from_fn(n_tx, |_, _| {
                        Complex64::from_polar(amp, rng.random::<f64>() * 2.0 * std::f64::consts::PI)
                    })
                })
                .collect(),
        };
        let combiners = match combiner {
            CombinerKind::Full => vec![DMatrix::identity(n_rx, n_rx); grid.n_symbols],
            CombinerKind::RandomBeams { m_rx } => {
                if m_rx == 0 || m_rx > n_rx {
                    return Err(Error::InvalidParameter(format!(
                        "need 1 ≤ M_rx ≤ N_rx, got M_rx = {m_rx}, N_rx = {n_rx}"
                    )));
                }
                (0..grid.n_symbols)
                    .map(|_| {
                        let g = DMatrix::from_fn(n_rx, m_rx, |_, _| {
                            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
                        });
                        g.qr().q()
                    })
                    .collect()
            }
        };
        Self::new(grid, precoders, combiners, tx_power, noise_psd)
    }

    pub fn n_tx(&self) -> usize {
        self.precoders.first().map_or(0, |f| f.len())
    }

    pub fn n_rx(&self) -> usize {
        self.combiners.first().map_or(0, |w| w.nrows())
    }

    pub fn m_rx(&self) -> usize {
        self.combiners.first().map_or(0, |w| w.ncols())
    }

    pub fn precoder(&self, n: usize, k: usize) -> &DVector<Complex64> {
        &self.precoders[n * self.n_symbols + k]
    }

    pub fn combiner(&self, k: usize) -> &DMatrix<Complex64> {
        &self.combiners[k]
    }

    /// Checks dimensions, `W_kᴴW_k = I` and `mean ‖f‖² = P_tx/W`.
    pub fn validate(&self, grid: &GridConfig) -> Result<()> {
        if self.n_subcarriers != grid.n_subcarriers || self.n_symbols != grid.n_symbols {
            return Err(Error::DimensionMismatch("pilot schedule does not match grid".into()));
        }
        if self.precoders.len() != grid.n_subcarriers * grid.n_symbols {
            return Err(Error::DimensionMismatch(format!(
                "expected {} precoders, got {}",
                grid.n_subcarriers * grid.n_symbols,
                self.precoders.len()
            )));
        }
        if self.combiners.len() != grid.n_symbols {
            return Err(Error::DimensionMismatch(format!(
                "expected {} combiners, got {}",
                grid.n_symbols,
                self.combiners.len()
            )));
        }
        let n_tx = self.n_tx();
        if n_tx == 0 || self.precoders.iter().any(|f| f.len() != n_tx) {
            return Err(Error::DimensionMismatch("precoders must share a non-zero length".into()));
        }
        let (n_rx, m_rx) = (self.n_rx(), self.m_rx());
        for (k, w) in self.combiners.iter().enumerate() {
            if w.nrows() != n_rx || w.ncols() != m_rx || m_rx == 0 || m_rx > n_rx {
                return Err(Error::DimensionMismatch(format!("combiner {k} has shape {:?}", w.shape())));
            }
            let dev = (w.adjoint() * w - DMatrix::<Complex64>::identity(m_rx, m_rx))
                .iter()
                .fold(0.0f64, |a, v| a.max(v.norm()));
            if dev > ORTHONORMAL_TOL {
                return Err(Error::NonOrthonormalCombiner { symbol: k, deviation: dev });
            }
        }
        if !(self.noise_psd >= 0.0) || !(self.tx_power > 0.0) {
            return Err(Error::InvalidParameter("need P_tx > 0 and N0 ≥ 0".into()));
        }
        let mean_power =
            self.precoders.iter().map(|f| f.norm_squared()).sum::<f64>() / self.precoders.len() as f64;
        let target = self.tx_power / grid.bandwidth();
        if ((mean_power - target) / target).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "mean ‖f‖² = {mean_power:e} but P_tx/W = {target:e}"
            )));
        }
        Ok(())
    }
}

/// Stacked observation; sample `(n, k, m)` sits at `(n·K + k)·M + m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub m_rx: usize,
    pub samples: Vec<Complex64>,
}

impl Observation {
    pub fn zeros(n_subcarriers: usize, n_symbols: usize, m_rx: usize) -> Self {
        Self {
            n_subcarriers,
            n_symbols,
            m_rx,
            samples: vec![Complex64::new(0.0, 0.0); n_subcarriers * n_symbols * m_rx],
        }
    }

    pub fn index(&self, n: usize, k: usize, m: usize) -> usize {
        (n * self.n_symbols + k) * self.m_rx + m
    }

    /// `y[n,k]` as a slice of length `M_rx`.
    pub fn y(&self, n: usize, k: usize) -> &[Complex64] {
        let start = self.index(n, k, 0);
        &self.samples[start..start + self.m_rx]
    }

    /// Little-endian layout: `N`, `K`, `M_rx` as u64, then `(re, im)` f64
    /// pairs in sample order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in [self.n_subcarriers, self.n_symbols, self.m_rx] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for s in &self.samples {
            w.write_all(&s.re.to_le_bytes())?;
            w.write_all(&s.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> std::io::Result<Self> {
        let mut word = [0u8; 8];
        let mut header = [0usize; 3];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word) as usize;
        }
        let count = header[0]
            .checked_mul(header[1])
            .and_then(|v| v.checked_mul(header[2]))
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, "header overflow"))?;
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut word)?;
            let re = f64::from_le_bytes(word);
            r.read_exact(&mut word)?;
            let im = f64::from_le_bytes(word);
            samples.push(Complex64::new(re, im));
        }
        Ok(Self {
            n_subcarriers: header[0],
            n_symbols: header[1],
            m_rx: header[2],
            samples,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.write_binary(&mut w).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        Self::read_binary(BufReader::new(File::open(path).map_err(io)?)).map_err(io)
    }
}

/// Noise-free `W_kᴴ H[n,k] f[n,k]`.
pub fn noiseless_observation(
    paths: &[PathParams],
    grid: &GridConfig,
    rx: &ArrayGeometry,
    tx: &ArrayGeometry,
    txrx: &TxRxConfig,
) -> Result<Observation> {
    txrx.validate(grid)?;
    if txrx.n_rx() != rx.n_elements() || txrx.n_tx() != tx.n_elements() {
        return Err(Error::DimensionMismatch(format!(
            "arrays have {}×{} elements, pilot schedule expects {}×{}",
            rx.n_elements(),
            tx.n_elements(),
            txrx.n_rx(),
            txrx.n_tx()
        )));
    }
    let h = channel_response(paths, grid, rx, tx);
    let mut obs = Observation::zeros(grid.n_subcarriers, grid.n_symbols, txrx.m_rx());
    for n in 0..grid.n_subcarriers {
        for k in 0..grid.n_symbols {
            let y = txrx.combiner(k).adjoint() * (&h[n * grid.n_symbols + k] * txrx.precoder(n, k));
            let start = obs.index(n, k, 0);
            obs.samples[start..start + y.len()].copy_from_slice(y.as_slice());
        }
    }
    Ok(obs)
}

/// Noisy observation; the same seed always yields the same noise.
pub fn observe(
    paths: &[PathParams],
    grid: &GridConfig,
    rx: &ArrayGeometry,
    tx: &ArrayGeometry,
    txrx: &TxRxConfig,
    seed: u64,
) -> Result<Observation> {
    let mut obs = noiseless_observation(paths, grid, rx, tx, txrx)?;
    add_noise(&mut obs.samples, txrx.noise_psd, seed);
    Ok(obs)
}

/// Adds i.i.d. `CN(0, variance)` samples.
pub fn add_noise(samples: &mut [Complex64], variance: f64, seed: u64) {
    if variance == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (variance / 2.0).sqrt();
    for s in samples.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *s += Complex64::new(re, im) * sigma;
    }
}

/// Matched-filter SNR of one path: `Σ_{n,k} ‖W_kᴴ H_l[n,k] f[n,k]‖² / N0`, in dB.
pub fn integrated_snr(
    path: &PathParams,
    grid: &GridConfig,
    rx: &ArrayGeometry,
    tx: &ArrayGeometry,
    txrx: &TxRxConfig,
) -> Result<f64> {
    let obs = noiseless_observation(std::slice::from_ref(path), grid, rx, tx, txrx)?;
    let energy: f64 = obs.samples.iter().map(|s| s.norm_sqr()).sum();
    Ok(10.0 * (energy / txrx.noise_psd).log10())
}
