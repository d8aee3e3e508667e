use nugget::data::{generate_synthetic, sidecar_path, test_mean, Dataset, Sampling};
use nugget::Error;

#[test]
fn noise_has_the_requested_spread() {
    let ds = generate_synthetic(10_000, 0.2, 42, Sampling::Grid).unwrap();
    let resid: Vec<f64> = (0..ds.n()).map(|i| ds.z[i] - test_mean(ds.points.point(i)[0], ds.points.point(i)[1])).collect();
    let mean = resid.iter().sum::<f64>() / resid.len() as f64;
    let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (resid.len() - 1) as f64;
    assert!((0.19..=0.21).contains(&var.sqrt()), "std {}", var.sqrt());
    assert!(mean.abs() < 0.01);
}

#[test]
fn reference_configuration() {
    let ds = generate_synthetic(2500, 0.2, 0, Sampling::Grid).unwrap();
    assert_eq!(ds.n(), 2500);
    assert_eq!(ds.points.point(0), &[0.0, 0.0]);
    assert_eq!(ds.points.point(2499), &[1.0, 1.0]);
    assert_eq!(ds.points.point(50), &[1.0 / 49.0, 0.0]);
    let clean = generate_synthetic(2500, 0.0, 0, Sampling::Grid).unwrap();
    assert!((clean.z[24 * 50 + 24] - test_mean(24.0 / 49.0, 24.0 / 49.0)).abs() < 1e-15);
    assert!(matches!(generate_synthetic(2501, 0.2, 0, Sampling::Grid), Err(Error::Input(_))));
    assert!(matches!(generate_synthetic(100, -0.1, 0, Sampling::Grid), Err(Error::Input(_))));
}

#[test]
fn random_sampling_stays_in_unit_square() {
    let ds = generate_synthetic(500, 0.1, 9, Sampling::UniformRandom).unwrap();
    assert!((0..ds.n()).all(|i| ds.points.point(i).iter().all(|v| (0.0..1.0).contains(v))));
    assert_eq!(ds.meta.sampling, Some(Sampling::UniformRandom));
}

#[test]
fn write_read_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let ds = generate_synthetic(400, 0.2, 17, Sampling::UniformRandom).unwrap();
    ds.write(&path).unwrap();
    assert!(sidecar_path(&path).exists());
    let back = Dataset::read(&path).unwrap();
    assert_eq!(back, ds);
    assert!(back.z.iter().zip(&ds.z).all(|(a, b)| a.to_bits() == b.to_bits()));
    let first = std::fs::read_to_string(&path).unwrap();
    back.write(&path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), first);
}

#[test]
fn metadata_reproduces_the_data() {
    let ds = generate_synthetic(100, 0.3, 5, Sampling::Grid).unwrap();
    let m = &ds.meta;
    let again = generate_synthetic(m.n, m.sigma0_true.unwrap(), m.seed.unwrap(), m.sampling.unwrap()).unwrap();
    assert_eq!(again, ds);
}

#[test]
fn malformed_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("header.csv", "a,b,z\n0,0,1\n"),
        ("text.csv", "x1,x2,z\n0,0,abc\n"),
        ("short.csv", "x1,x2,z\n0,0\n"),
        ("empty.csv", "x1,x2,z\n"),
        ("nan.csv", "x1,x2,z\n0,0,NaN\n"),
    ];
    for (name, body) in cases {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        assert!(Dataset::read(&p).is_err(), "{name}");
    }
    let p = dir.path().join("meta.csv");
    std::fs::write(&p, "x1,x2,z\n0,0,1\n").unwrap();
    std::fs::write(sidecar_path(&p), r#"{"n":5,"d":2,"sigma0_true":null,"seed":null,"sampling":null}"#).unwrap();
    assert!(matches!(Dataset::read(&p), Err(Error::Input(_))));
    assert!(Dataset::read(&dir.path().join("missing.csv")).is_err());
}
