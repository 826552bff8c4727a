use ndarray::{Array2, Axis};
use nvcim::codec::{decode, encode, train_autoencoder, AeTrainConfig, VirtualTokenSet};
use nvcim::rng::{normal, seeded};

/// `n` rows drawn from a random rank-`rank` subspace of R^dim.
fn low_rank(n: usize, dim: usize, rank: usize, seed: u64) -> Array2<f64> {
    let mut rng = seeded(seed);
    let basis = Array2::from_shape_simple_fn((rank, dim), || normal(&mut rng) / (dim as f64).sqrt());
    let coeffs = Array2::from_shape_simple_fn((n, rank), || normal(&mut rng));
    coeffs.dot(&basis)
}

fn variance(x: &Array2<f64>) -> f64 {
    let mean = x.mean_axis(Axis(0)).unwrap();
    (x - &mean).mapv(|v| v * v).mean().unwrap()
}

#[test]
fn rank_48_corpus_in_2048_dims() {
    let all = low_rank(610, 2048, 48, 1);
    let corpus = all.slice(ndarray::s![..600, ..]).to_owned();
    let (ae, log) = train_autoencoder(&corpus.view(), 48, &AeTrainConfig::default()).unwrap();
    let mse = ae.reconstruction_mse(&corpus.view()).unwrap();
    let var = variance(&corpus);
    assert!(mse <= 0.01 * var, "mse {mse} vs variance {var}");
    assert!(log.last() < log.initial());

    // Fresh vectors from the same subspace survive encode/decode.
    let fresh = all.slice(ndarray::s![600.., ..]).to_owned();
    let vts = VirtualTokenSet::new(fresh.clone(), "v", None).unwrap();
    let ep = encode(&vts, &ae).unwrap();
    assert_eq!(ep.data.dim(), (10, 48));
    let back = decode(&ep, &ae).unwrap();
    let err = (&back.tokens - &fresh).mapv(|v| v * v).sum().sqrt();
    let norm = fresh.mapv(|v| v * v).sum().sqrt();
    assert!(err <= 0.02 * norm, "relative error {}", err / norm);
}
