use proptest::prelude::*;

use super::*;
use crate::numerics::{OffsetMode, RngState};

fn eval_set(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = RngState::new(seed);
    Tensor::new(vec![n, d], (0..n * d).map(|_| rng.normal()).collect()).unwrap()
}

/// Direct textbook formula with sample (N−1) moments.
fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn pearson_examples() {
    let xs = [1.0, 2.0, 3.0, 4.0];
    assert!((pearson(&xs, &xs.map(|v| 2.0 * v + 1.0)).unwrap() - 1.0).abs() < 1e-15);
    assert!((pearson(&xs, &xs.map(|v| -v)).unwrap() + 1.0).abs() < 1e-15);
    let r = pearson(&xs, &[1.0, 3.0, 2.0, 4.0]).unwrap();
    assert!((r - pearson_oracle(&xs, &[1.0, 3.0, 2.0, 4.0])).abs() < 1e-14);
    assert!((r - 0.8).abs() < 1e-14);
    let r = nc(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap();
    assert!((r + 0.5).abs() < 1e-14);
    assert!(matches!(pearson(&xs, &[1.0; 4]), Err(Error::ZeroVariance)));
    assert_eq!(nc(&xs, &[0.0; 4]).unwrap(), 0.0);
    assert!(nc(&xs, &[1.0]).is_err());
}

#[test]
fn constant_vectors_score_zero() {
    let y = [0.3, -1.0, 2.5, 0.7, 1.1, -0.2, 0.9];
    for c in [0.0, 0.1, -0.7, 1e6 / 3.0] {
        assert_eq!(nc(&[c; 7], &y).unwrap(), 0.0, "{c}");
        assert_eq!(nc(&y, &[c; 7]).unwrap(), 0.0);
    }
    assert!(matches!(pearson(&[0.1; 7], &y), Err(Error::ZeroVariance)));
}

#[test]
fn nc_is_affine_invariant() {
    let mut rng = RngState::new(2);
    let f = rng.normal_vec(100);
    let g: Vec<f64> = f.iter().map(|v| 3.5 * v - 7.0).collect();
    assert!((nc(&f, &g).unwrap() - 1.0).abs() < 1e-12);
    assert!((nc(&f, &f).unwrap() - 1.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn nc_symmetric_and_bounded(xs in proptest::collection::vec(-10.0f64..10.0, 2..40), seed in 0u64..1000) {
        let mut rng = RngState::new(seed);
        let ys: Vec<f64> = xs.iter().map(|_| rng.normal()).collect();
        let a = nc(&xs, &ys).unwrap();
        let b = nc(&ys, &xs).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a.abs() <= 1.0 + 1e-12);
        if let Ok(r) = pearson(&xs, &ys) {
            prop_assert!((r - pearson_oracle(&xs, &ys)).abs() < 1e-9);
        }
    }

    #[test]
    fn adding_a_student_never_lowers_bnc(seed in 0u64..500) {
        let mut rng = RngState::new(seed);
        let t = ActivationTable { nodes: (0..3).map(|_| rng.normal_vec(20)).collect() };
        let mut s = ActivationTable { nodes: (0..4).map(|_| rng.normal_vec(20)).collect() };
        let before = summarize(0, nc_matrix(&s, &t).unwrap());
        s.nodes.push(rng.normal_vec(20));
        let after = summarize(0, nc_matrix(&s, &t).unwrap());
        for (a, b) in before.bnc.iter().zip(&after.bnc) {
            prop_assert!(b >= a);
        }
        prop_assert!(after.sorted_bnc.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn copy_of_teacher_is_fully_specialized() {
    let mut rng = RngState::new(5);
    let t = Network::dense(&[6, 8, 5, 3], true, &mut rng).unwrap();
    let x = eval_set(300, 6, 1);
    let rep = nc_report(&t, &t, &x).unwrap();
    assert_eq!(rep.len(), 2);
    for l in &rep {
        for &b in &l.bnc {
            // a node that never fires on the eval set scores 0 against itself
            assert!((b - 1.0).abs() < 1e-12 || b == 0.0);
        }
        let c = ratios_and_histogram(l, 0.8, 0.9);
        if l.bnc.iter().all(|&b| b > 0.9) {
            assert_eq!(c.ratio, Some(0.0));
            assert!(c.histogram.iter().all(|&h| h >= 1));
        }
    }
}

#[test]
fn noise_node_loses_its_bnc() {
    let mut rng = RngState::new(9);
    let t = Network::dense(&[5, 4, 2], true, &mut rng).unwrap();
    let mut s = t.clone();
    let mut p = s.params_flat();
    // first-layer weights of node 2 are entries 10..15
    for v in &mut p[10..15] {
        *v = rng.normal();
    }
    s.set_params_flat(&p).unwrap();
    let x = eval_set(500, 5, 3);
    let rep = &nc_report(&s, &t, &x).unwrap()[0];
    let others: Vec<f64> = (0..4).filter(|&j| j != 2).map(|j| rep.bnc[j]).collect();
    assert!(others.iter().all(|&b| b > rep.bnc[2]), "{:?}", rep.bnc);
    assert!(rep.mbnc < 1.0);
}

#[test]
fn noise_student_has_infinite_ratio() {
    let s = ActivationTable { nodes: vec![vec![1.0, 2.0, 3.0, 4.0], vec![4.0, 1.0, 3.0, 2.0]] };
    let t = ActivationTable { nodes: vec![vec![2.0, 1.0, 1.0, 2.0]] };
    let l = summarize(0, nc_matrix(&s, &t).unwrap());
    let c = ratios_and_histogram(&l, 0.8, 0.9);
    assert_eq!(c.ratio, None);
    assert!(c.ratio_or_inf().is_infinite());
    assert_eq!(c.histogram, vec![0]);
}

#[test]
fn conv_channels_concatenate_spatial_maps() {
    let mut rng = RngState::new(4);
    let net = Network::conv([3, 5, 5], &[2], 3, 2, true, &mut rng).unwrap();
    let x = eval_set(7, 75, 2);
    let tables = record_activations(&net, &x).unwrap();
    assert_eq!(tables[0].nodes.len(), 2);
    assert_eq!(tables[0].samples(), 7 * 9);
}

fn plane_basis(d: usize, k: usize) -> SubspaceBasis {
    let mut rng = RngState::new(17);
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let mut v = vec![0.0; d];
            for c in v.iter_mut().take(k) {
                *c = rng.normal();
            }
            v
        })
        .collect();
    crate::numerics::pca_fit(&Tensor::from_rows(&rows).unwrap(), OffsetMode::Zero).unwrap().truncate(k).unwrap()
}

fn with_first_layer(net: &Network, rows: &[Vec<f64>]) -> Network {
    let mut n = net.clone();
    let mut p = n.params_flat();
    let d = rows[0].len();
    for (j, r) in rows.iter().enumerate() {
        p[j * d..(j + 1) * d].copy_from_slice(r);
    }
    n.set_params_flat(&p).unwrap();
    n
}

#[test]
fn eps_in_out_constructions() {
    let mut rng = RngState::new(21);
    let t = Network::dense(&[4, 2, 2], true, &mut rng).unwrap();
    let basis = plane_basis(4, 2);
    let tw: Vec<Vec<f64>> = (0..2).map(|j| t.node_kernel(0, j).unwrap()).collect();
    // student node 0 copies teacher node 0; node 1 adds an out-of-plane offset to teacher node 1
    let s1: Vec<f64> = tw[1].iter().zip([0.0, 0.0, 0.3, -0.2]).map(|(a, b)| a + b).collect();
    let s = with_first_layer(&t, &[tw[0].clone(), s1]);
    let x = eval_set(100, 4, 5);
    let rep = &nc_report(&s, &t, &x).unwrap()[0];
    let e = eps_in_out(&s, &t, &basis, rep).unwrap();
    assert!(e.eps_in.get2(0, 0) < 1e-15 && e.eps_out.get2(0, 0) < 1e-15);
    assert!(e.eps_out.get2(1, 1) > 0.0);
    for k in 0..2 {
        for j in 0..2 {
            let a = s.node_kernel(0, k).unwrap();
            let b = t.node_kernel(0, j).unwrap();
            let dw: Vec<f64> = a.iter().map(|v| v / norm2(&a)).zip(b.iter().map(|v| v / norm2(&b))).map(|(p, q)| p - q).collect();
            let total = dw.iter().map(|v| v * v).sum::<f64>();
            let split = e.eps_in.get2(k, j).powi(2) + e.eps_out.get2(k, j).powi(2);
            assert!((total - split).abs() < 1e-12);
        }
    }
    assert!(e.sorted_in.windows(2).all(|w| w[0] <= w[1]));
    assert!(e.sorted_out.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn out_of_plane_perturbation_has_zero_eps_in() {
    let mut rng = RngState::new(22);
    let t = Network::dense(&[4, 1, 2], true, &mut rng).unwrap();
    let basis = plane_basis(4, 2);
    // equal norms, differing only along e2 which is orthogonal to the plane
    let t = with_first_layer(&t, &[vec![0.6, 0.8, 0.5, 0.0]]);
    let s = with_first_layer(&t, &[vec![0.6, 0.8, -0.5, 0.0]]);
    let rep = summarize(0, Tensor::new(vec![1, 1], vec![1.0]).unwrap());
    let e = eps_in_out(&s, &t, &basis, &rep).unwrap();
    assert!(e.eps_in.get2(0, 0) < 1e-15);
    assert!((e.eps_out.get2(0, 0) - 1.0 / 1.25f64.sqrt()).abs() < 1e-12);
}

#[test]
fn zero_kernel_is_degenerate() {
    let mut rng = RngState::new(23);
    let t = Network::dense(&[3, 2, 2], true, &mut rng).unwrap();
    let s = with_first_layer(&t, &[vec![0.0; 3], vec![1.0, 0.0, 0.0]]);
    let rep = summarize(0, Tensor::zeros(vec![2, 2]));
    assert!(matches!(eps_in_out(&s, &t, &plane_basis(3, 2), &rep), Err(Error::DegenerateNode(_))));
}

#[test]
fn curves_and_summary_serialize() {
    let mut buf = Vec::new();
    write_curve(&mut buf, &[0.9, 0.5]).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "index,value\n0,0.9\n1,0.5\n");
    let l = summarize(0, Tensor::new(vec![2, 1], vec![0.95, 0.1]).unwrap());
    let json = summary(&[l], None).to_json().unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["layers"][0]["counts"]["ratio"], 1.0);
    assert_eq!(v["layers"][0]["mbnc"], 0.95);
}
