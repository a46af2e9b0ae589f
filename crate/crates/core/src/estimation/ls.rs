//! Unstructured least-squares channel estimate and vectorisation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::linalg::{complex_lstsq, complex_rank};
use crate::signal::{Observation, TxRxConfig};
use crate::{Error, Result};

/// How pilots are inverted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LsMode {
    /// Independent inversion per (n,k). Needs a single Tx antenna and a
    /// combiner of full rank `N_rx` on every symbol.
    #[default]
    PerSymbol,
    /// Assumes a static channel over the `K` symbols and pools them per
    /// subcarrier, so varying precoders and combiners jointly identify `H_n`.
    /// The estimate has a single symbol.
    PooledStatic,
}

/// `Ĥ[n,k]` for every subcarrier/symbol pair, index `n·K + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub n_rx: usize,
    pub n_tx: usize,
    pub h: Vec<DMatrix<Complex64>>,
    /// Average per-entry variance of the estimation error.
    pub noise_level: f64,
}

impl ChannelEstimate {
    pub fn get(&self, n: usize, k: usize) -> &DMatrix<Complex64> {
        &self.h[n * self.n_symbols + k]
    }

    pub fn len(&self) -> usize {
        self.n_subcarriers * self.n_symbols * self.n_rx * self.n_tx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Least-squares inversion of `y = Wᴴ H f` per (n,k), or pooled over `k`.
pub fn ls_channel_estimate(obs: &Observation, txrx: &TxRxConfig, mode: LsMode) -> Result<ChannelEstimate> {
    if obs.n_subcarriers != txrx.n_subcarriers || obs.n_symbols != txrx.n_symbols || obs.m_rx != txrx.m_rx() {
        return Err(Error::DimensionMismatch("observation does not match the pilot schedule".into()));
    }
    let (nr, nt) = (txrx.n_rx(), txrx.n_tx());
    let kk = obs.n_symbols;
    let n0 = txrx.noise_psd;
    let mut h = Vec::new();
    let mut noise_sum = 0.0;
    match mode {
        LsMode::PerSymbol => {
            for n in 0..obs.n_subcarriers {
                for k in 0..kk {
                    let (hk, var) = solve_block(&[(n, k)], obs, txrx, nr, nt).map_err(|_| {
                        Error::RankDeficientPilots {
                            subcarrier: n,
                            symbol: Some(k),
                        }
                    })?;
                    noise_sum += var;
                    h.push(hk);
                }
            }
        }
        LsMode::PooledStatic => {
            for n in 0..obs.n_subcarriers {
                let pairs: Vec<(usize, usize)> = (0..kk).map(|k| (n, k)).collect();
                let (hn, var) = solve_block(&pairs, obs, txrx, nr, nt).map_err(|_| Error::RankDeficientPilots {
                    subcarrier: n,
                    symbol: None,
                })?;
                noise_sum += var;
                h.push(hn);
            }
        }
    }
    let blocks = h.len() as f64;
    Ok(ChannelEstimate {
        n_subcarriers: obs.n_subcarriers,
        n_symbols: if mode == LsMode::PooledStatic { 1 } else { kk },
        n_rx: nr,
        n_tx: nt,
        h,
        noise_level: n0 * noise_sum / blocks,
    })
}

/// Solves the stacked system `[f_kᵀ ⊗ W_kᴴ] vec(H) = [y_k]`. Returns `H` and the
/// mean diagonal of `(AᴴA)⁻¹`; `Err(())` when `A` lacks full column rank.
fn solve_block(
    pairs: &[(usize, usize)],
    obs: &Observation,
    txrx: &TxRxConfig,
    nr: usize,
    nt: usize,
) -> std::result::Result<(DMatrix<Complex64>, f64), ()> {
    let m = txrx.m_rx();
    // Scalar fast path: SISO.
    if nr == 1 && nt == 1 && m == 1 && pairs.len() == 1 {
        let (n, k) = pairs[0];
        let a = txrx.precoder(n, k)[0] * txrx.combiner(k)[(0, 0)].conj();
        if a.norm_sqr() == 0.0 {
            return Err(());
        }
        return Ok((DMatrix::from_element(1, 1, obs.y(n, k)[0] / a), 1.0 / a.norm_sqr()));
    }
    let rows = m * pairs.len();
    let mut a = DMatrix::zeros(rows, nr * nt);
    let mut y = DVector::zeros(rows);
    for (b, &(n, k)) in pairs.iter().enumerate() {
        let wh = txrx.combiner(k).adjoint();
        let f = txrx.precoder(n, k);
        for t in 0..nt {
            for r in 0..nr {
                for i in 0..m {
                    // vec(H) is column-major: entry (r, t) sits at t·N_rx + r.
                    a[(b * m + i, t * nr + r)] = f[t] * wh[(i, r)];
                }
            }
        }
        for (i, v) in obs.y(n, k).iter().enumerate() {
            y[b * m + i] = *v;
        }
    }
    if complex_rank(&a, 1e-10) < nr * nt {
        return Err(());
    }
    let x = complex_lstsq(&a, &y).ok_or(())?;
    let gram = a.adjoint() * &a;
    let var = gram
        .try_inverse()
        .map(|g| g.diagonal().iter().map(|v| v.re).sum::<f64>() / (nr * nt) as f64)
        .ok_or(())?;
    Ok((DMatrix::from_column_slice(nr, nt, x.as_slice()), var))
}

/// Stacks `Ĥ` as `ĥ[((n·K + k)·N_rx + r)·N_tx + t]`, matching the Kronecker
/// order delay ⊗ Doppler ⊗ rx ⊗ tx.
pub fn vectorize(est: &ChannelEstimate) -> DVector<Complex64> {
    let mut out = DVector::zeros(est.len());
    let mut i = 0;
    for hk in &est.h {
        for r in 0..est.n_rx {
            for t in 0..est.n_tx {
                out[i] = hk[(r, t)];
                i += 1;
            }
        }
    }
    out
}

/// Inverse of [`vectorize`].
pub fn devectorize(
    h: &DVector<Complex64>,
    n_subcarriers: usize,
    n_symbols: usize,
    n_rx: usize,
    n_tx: usize,
    noise_level: f64,
) -> Result<ChannelEstimate> {
    if h.len() != n_subcarriers * n_symbols * n_rx * n_tx {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} cannot hold {n_subcarriers}×{n_symbols}×{n_rx}×{n_tx}",
            h.len()
        )));
    }
    let block = n_rx * n_tx;
    let mats = (0..n_subcarriers * n_symbols)
        .map(|b| DMatrix::from_fn(n_rx, n_tx, |r, t| h[b * block + r * n_tx + t]))
        .collect();
    Ok(ChannelEstimate {
        n_subcarriers,
        n_symbols,
        n_rx,
        n_tx,
        h: mats,
        noise_level,
    })
}
