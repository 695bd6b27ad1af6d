use super::{Layer, Network};
use crate::error::{Error, Result};

/// Outcome of [`Network::prune_inactive`].
#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    /// Removed node indices per hidden layer (original numbering).
    pub removed: Vec<Vec<usize>>,
    pub widths_before: Vec<usize>,
    pub widths_after: Vec<usize>,
    /// max |Δlogit| over the probe batch.
    pub max_logit_delta: f64,
}

fn keep_rows(data: &[f64], row_len: usize, keep: &[usize]) -> Vec<f64> {
    keep.iter().flat_map(|&r| data[r * row_len..(r + 1) * row_len].iter().copied()).collect()
}

impl Network {
    /// Removes hidden nodes whose fan-out ℓ2 norm is below
    /// `threshold_ratio × (max fan-out norm in that layer)`. Decisions are made
    /// on the original network, so layers are pruned independently.
    pub fn prune_inactive(&self, threshold_ratio: f64, probe: &[Vec<f64>]) -> Result<(Network, PruneReport)> {
        if !(threshold_ratio >= 0.0) {
            return Err(Error::InvalidArgument(format!("threshold ratio {threshold_ratio} is negative")));
        }
        let hidden = self.hidden_layers();
        let mut keep_sets = Vec::with_capacity(hidden);
        let mut removed = Vec::with_capacity(hidden);
        for l in 0..hidden {
            let norms = self.fanout_norms(l)?;
            let max = norms.iter().copied().fold(0.0, f64::max);
            let cut = threshold_ratio * max;
            let (keep, drop): (Vec<usize>, Vec<usize>) = (0..norms.len()).partition(|&j| !(norms[j] < cut));
            if keep.is_empty() {
                return Err(Error::EmptyLayer(l));
            }
            keep_sets.push(keep);
            removed.push(drop);
        }

        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let out_keep: Option<&Vec<usize>> = keep_sets.get(l);
            let in_keep: Option<&Vec<usize>> = if l == 0 { None } else { keep_sets.get(l - 1) };
            let new = match layer {
                Layer::Dense(d) => {
                    let mut d = d.clone();
                    if let Some(ik) = in_keep {
                        // the previous layer may be a conv whose output is flattened
                        let plane = d.in_dim / self.layers[l - 1].nodes();
                        let cols: Vec<usize> = ik.iter().flat_map(|&c| c * plane..(c + 1) * plane).collect();
                        d.weight = (0..d.out_dim).flat_map(|o| cols.iter().map(|&c| d.row(o)[c]).collect::<Vec<_>>()).collect();
                        d.in_dim = cols.len();
                    }
                    if let Some(ok) = out_keep {
                        d.weight = keep_rows(&d.weight, d.in_dim, ok);
                        d.bias = ok.iter().map(|&j| d.bias[j]).collect();
                        d.out_dim = ok.len();
                    }
                    Layer::Dense(d)
                }
                Layer::Conv(c) => {
                    let mut c = c.clone();
                    let kk = c.k * c.k;
                    if let Some(ik) = in_keep {
                        c.kernels = (0..c.out_ch)
                            .flat_map(|o| ik.iter().flat_map(|&i| c.kernel(o)[i * kk..(i + 1) * kk].to_vec()).collect::<Vec<_>>())
                            .collect();
                        c.in_ch = ik.len();
                    }
                    if let Some(ok) = out_keep {
                        c.kernels = keep_rows(&c.kernels, c.kernel_len(), ok);
                        c.bias = ok.iter().map(|&j| c.bias[j]).collect();
                        c.out_ch = ok.len();
                    }
                    Layer::Conv(c)
                }
            };
            layers.push(new);
        }
        let pruned = Network::new(self.input_shape.clone(), layers)?;
        let mut max_logit_delta: f64 = 0.0;
        for x in probe {
            let a = self.predict(x)?;
            let b = pruned.predict(x)?;
            max_logit_delta = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(max_logit_delta, f64::max);
        }
        let report = PruneReport {
            removed,
            widths_before: self.hidden_widths(),
            widths_after: pruned.hidden_widths(),
            max_logit_delta,
        };
        Ok((pruned, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    #[test]
    fn zero_fanout_channel_is_removed_without_changing_logits() {
        let mut rng = RngState::new(3);
        let mut net = Network::conv([2, 6, 6], &[4, 3], 3, 2, true, &mut rng).unwrap();
        net.zero_fanout(0, 2).unwrap();
        let probe: Vec<Vec<f64>> = (0..4).map(|_| (0..72).map(|_| rng.uniform()).collect()).collect();
        let (p, rep) = net.prune_inactive(0.01, &probe).unwrap();
        assert_eq!(rep.removed[0], vec![2]);
        assert_eq!(p.hidden_widths(), vec![3, 3]);
        assert_eq!(rep.max_logit_delta, 0.0);
    }

    #[test]
    fn zero_ratio_keeps_everything() {
        let mut rng = RngState::new(3);
        let net = Network::dense(&[4, 5, 3, 2], true, &mut rng).unwrap();
        let (p, rep) = net.prune_inactive(0.0, &[vec![0.1; 4]]).unwrap();
        assert_eq!(p, net);
        assert!(rep.removed.iter().all(Vec::is_empty));
    }

    #[test]
    fn dense_prune_drops_rows_and_columns() {
        let mut rng = RngState::new(8);
        let mut net = Network::dense(&[3, 5, 4, 2], true, &mut rng).unwrap();
        net.zero_fanout(0, 1).unwrap();
        net.zero_fanout(1, 3).unwrap();
        let x = vec![0.2, -0.4, 0.9];
        let (p, rep) = net.prune_inactive(0.5, &[x.clone()]).unwrap();
        assert!(rep.removed[0].contains(&1));
        assert!(rep.removed[1].contains(&3));
        assert_eq!(p.layers()[1].weights().len(), p.hidden_widths()[1] * p.hidden_widths()[0]);
        // only zero fan-out nodes were cut when all others clear the bar
        if rep.removed.iter().map(Vec::len).sum::<usize>() == 2 {
            assert_eq!(net.predict(&x).unwrap(), p.predict(&x).unwrap());
        }
    }

    #[test]
    fn pruning_everything_is_an_error() {
        let mut rng = RngState::new(8);
        let net = Network::dense(&[3, 2, 2], true, &mut rng).unwrap();
        assert!(matches!(net.prune_inactive(1.5, &[]), Err(Error::EmptyLayer(0))));
        let mut net = Network::dense(&[3, 2, 2], true, &mut rng).unwrap();
        net.zero_fanout(0, 0).unwrap();
        let (p, _) = net.prune_inactive(1.0, &[]).unwrap();
        assert_eq!(p.hidden_widths(), vec![1]);
    }
}
