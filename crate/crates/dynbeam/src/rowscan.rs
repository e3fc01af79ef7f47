//! Incremental per-antenna candidate scan shared by the discrete analog
//! steps of both designers.
//!
//! The scan maintains the K x K coupling matrix `z[(j,k)] = h_j^H F_RF f_k`.
//! Antenna `i` assigned to chain `c` with phase value `v` contributes the
//! rank-one term `conj(h_j[i]) * v * f_bb[(c,k)]`, so a row change is a
//! subtract-and-add on `z` and any objective expressible in `z` can be
//! evaluated per candidate in O(K^2).

use nalgebra::{DMatrix, DVector};

use crate::codebook::AnalogBeamformer;
use crate::C64;

pub(crate) struct RowScan {
    h: Vec<DVector<C64>>,
    f_bb: DMatrix<C64>,
    analog: AnalogBeamformer,
    z: DMatrix<C64>,
}

impl RowScan {
    pub fn new(channels: &[DVector<C64>], f_bb: &DMatrix<C64>, analog: AnalogBeamformer) -> Self {
        let k = channels.len();
        let mut z = DMatrix::zeros(k, k);
        let f_rf = analog.materialize();
        for (j, h) in channels.iter().enumerate() {
            let eff = f_rf.adjoint() * h;
            for col in 0..k {
                z[(j, col)] = eff.dotc(&f_bb.column(col));
            }
        }
        Self {
            h: channels.to_vec(),
            f_bb: f_bb.clone(),
            analog,
            z,
        }
    }

    #[cfg(test)]
    pub fn z(&self) -> &DMatrix<C64> {
        &self.z
    }

    pub fn analog(&self) -> &AnalogBeamformer {
        &self.analog
    }

    pub fn into_analog(self) -> AnalogBeamformer {
        self.analog
    }

    fn add_contribution(&self, z: &mut DMatrix<C64>, antenna: usize, rf: usize, phase: usize, sign: f64) {
        let v = self.analog.codebook().entry(phase) * sign;
        let k = self.h.len();
        for j in 0..k {
            let hij = self.h[j][antenna].conj();
            for col in 0..k {
                z[(j, col)] += hij * v * self.f_bb[(rf, col)];
            }
        }
    }

    /// Scan all candidates for one antenna and apply the best strictly
    /// improving one. Candidates are visited in (phase, rf) order and only a
    /// strict improvement replaces the incumbent, so equal-valued candidates
    /// resolve to the lowest phase index, then the lowest RF index, and a row
    /// that is already optimal stays put.
    ///
    /// When `frozen` is set the RF index is pinned and only phases are
    /// searched (the fixed-subarray restriction).
    pub fn improve_row<F: Fn(&DMatrix<C64>) -> f64>(
        &mut self,
        antenna: usize,
        objective: &F,
        frozen: bool,
    ) -> bool {
        let (cur_rf, cur_phase) = self.analog.assignment()[antenna];
        let mut base = self.z.clone();
        self.add_contribution(&mut base, antenna, cur_rf, cur_phase, -1.0);

        let mut best = objective(&self.z);
        let mut best_choice = None;
        let num_phases = self.analog.codebook().len();
        let rf_range: Vec<usize> = if frozen {
            vec![cur_rf]
        } else {
            (0..self.analog.n_rf()).collect()
        };

        let mut candidate = base.clone();
        for phase in 0..num_phases {
            for &rf in &rf_range {
                if (rf, phase) == (cur_rf, cur_phase) {
                    continue;
                }
                candidate.copy_from(&base);
                self.add_contribution(&mut candidate, antenna, rf, phase, 1.0);
                let value = objective(&candidate);
                if value > best {
                    best = value;
                    best_choice = Some((rf, phase));
                }
            }
        }

        if let Some((rf, phase)) = best_choice {
            self.add_contribution(&mut base, antenna, rf, phase, 1.0);
            self.z = base;
            self.analog.set(antenna, rf, phase);
            true
        } else {
            false
        }
    }

    /// Scan all joint candidates for a pair of antennas and apply the best
    /// strictly improving combination. Escapes single-row local optima where
    /// two rows must move together. Candidate order mirrors `improve_row`
    /// (phase outer, rf inner, antenna `a` outer), so ties stay deterministic.
    pub fn improve_pair<F: Fn(&DMatrix<C64>) -> f64>(
        &mut self,
        a: usize,
        b: usize,
        objective: &F,
    ) -> bool {
        let (rf_a, ph_a) = self.analog.assignment()[a];
        let (rf_b, ph_b) = self.analog.assignment()[b];
        let mut base = self.z.clone();
        self.add_contribution(&mut base, a, rf_a, ph_a, -1.0);
        self.add_contribution(&mut base, b, rf_b, ph_b, -1.0);

        let mut best = objective(&self.z);
        let mut best_choice = None;
        let num_phases = self.analog.codebook().len();
        let n_rf = self.analog.n_rf();
        let mut with_a = base.clone();
        let mut candidate = base.clone();
        for pa in 0..num_phases {
            for ca in 0..n_rf {
                with_a.copy_from(&base);
                self.add_contribution(&mut with_a, a, ca, pa, 1.0);
                for pb in 0..num_phases {
                    for cb in 0..n_rf {
                        if (ca, pa) == (rf_a, ph_a) && (cb, pb) == (rf_b, ph_b) {
                            continue;
                        }
                        candidate.copy_from(&with_a);
                        self.add_contribution(&mut candidate, b, cb, pb, 1.0);
                        let value = objective(&candidate);
                        if value > best {
                            best = value;
                            best_choice = Some((ca, pa, cb, pb));
                        }
                    }
                }
            }
        }

        if let Some((ca, pa, cb, pb)) = best_choice {
            self.add_contribution(&mut base, a, ca, pa, 1.0);
            self.add_contribution(&mut base, b, cb, pb, 1.0);
            self.z = base;
            self.analog.set(a, ca, pa);
            self.analog.set(b, cb, pb);
            true
        } else {
            false
        }
    }

    /// One ascending pass over all antennas; returns how many rows changed.
    pub fn sweep<F: Fn(&DMatrix<C64>) -> f64>(&mut self, objective: &F, frozen: bool) -> usize {
        (0..self.analog.nt())
            .filter(|&i| self.improve_row(i, objective, frozen))
            .count()
    }
}

/// Sum-rate objective on the coupling matrix.
pub(crate) fn rate_objective(noise_vars: &[f64]) -> impl Fn(&DMatrix<C64>) -> f64 + '_ {
    move |z: &DMatrix<C64>| {
        let k = noise_vars.len();
        (0..k)
            .map(|u| {
                let signal = z[(u, u)].norm_sqr();
                let interference: f64 = (0..k)
                    .filter(|&j| j != u)
                    .map(|j| z[(u, j)].norm_sqr())
                    .sum();
                (1.0 + signal / (interference + noise_vars[u])).log2()
            })
            .sum()
    }
}
