use gorl_core::analysis::{count_modes, kde_density, DEFAULT_MIN_PROMINENCE};
use gorl_core::decoder::*;
use gorl_core::mathcore::{gaussian_draw, Matrix, RngStream};

fn mixture_data(n: usize, stream: &mut RngStream) -> DecoderDataset {
    let targets: Vec<f64> = (0..n)
        .map(|_| {
            let m = if stream.uniform() < 0.5 { 0.7 } else { -0.7 };
            unsquash((m + 0.05 * stream.normal()).clamp(-1.0, 1.0))
        })
        .collect();
    DecoderDataset {
        states: Matrix::filled(n, 1, 0.3),
        targets: Matrix::column(&targets).unwrap(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn recovers_both_modes(kind: DecoderKind) {
    let mut s = RngStream::new(1, 0);
    let n = 10_000;
    let data = mixture_data(n, &mut s);
    let mut dec = Decoder::build(kind, 1, 1, &DecoderArch::default(), &mut s).unwrap();
    let hist = train_decoder(&mut dec, &data, &DecoderTrainConfig::default(), &mut s).unwrap();
    assert!(hist.last().unwrap() < &hist[0]);
    let eps = gaussian_draw(&mut s, n, 1);
    let a = dec.decode_shared(&Matrix::filled(n, 1, 0.3), &eps, &mut s).unwrap().into_data();
    let pos: Vec<f64> = a.iter().copied().filter(|&x| x > 0.0).collect();
    let neg: Vec<f64> = a.iter().copied().filter(|&x| x <= 0.0).collect();
    let split = pos.len() as f64 / n as f64;
    assert!((split - 0.5).abs() <= 0.1, "{kind}: split {split}");
    assert!((median(pos) - 0.7).abs() < 0.1 && (median(neg) + 0.7).abs() < 0.1);
    let modes = count_modes(&kde_density(&a, None, 0.8).unwrap(), DEFAULT_MIN_PROMINENCE);
    assert_eq!(modes.modes, 2, "{kind}: {:?}", modes.locations);
}

#[test]
fn flow_matching_recovers_mixture() {
    recovers_both_modes(DecoderKind::FlowMatching);
}

#[test]
fn diffusion_recovers_mixture() {
    recovers_both_modes(DecoderKind::Diffusion);
}

#[test]
fn single_pair_is_memorized() {
    let mut s = RngStream::new(2, 0);
    let target = 0.45;
    let n = 256;
    let data = DecoderDataset {
        states: Matrix::filled(n, 1, -0.2),
        targets: Matrix::filled(n, 1, unsquash(target)),
    };
    let mut dec = Decoder::build(DecoderKind::FlowMatching, 1, 1, &DecoderArch::default(), &mut s).unwrap();
    let cfg = DecoderTrainConfig { epochs: 2000, batch_size: n, lr: 1e-3 };
    train_decoder(&mut dec, &data, &cfg, &mut s).unwrap();
    let eps = gaussian_draw(&mut s, 1000, 1);
    let a = dec.decode_shared(&Matrix::filled(1000, 1, -0.2), &eps, &mut s).unwrap().into_data();
    let close = a.iter().filter(|x| (*x - target).abs() < 0.05).count();
    assert!(close >= 950, "{close}/1000 within 0.05");
}

#[test]
fn flow_matching_decode_is_pure() {
    let mut s = RngStream::new(3, 0);
    let dec = Decoder::build(DecoderKind::FlowMatching, 2, 2, &DecoderArch::default(), &mut s).unwrap();
    let (a, b) = (dec.decode(&[0.1, 0.2], &[0.3, -1.0], &mut RngStream::new(0, 0)).unwrap(),
                  dec.decode(&[0.1, 0.2], &[0.3, -1.0], &mut RngStream::new(9, 9)).unwrap());
    assert_eq!(a, b);
    let d = Decoder::build(DecoderKind::Diffusion, 2, 2, &DecoderArch::default(), &mut s).unwrap();
    let x = d.decode(&[0.1, 0.2], &[0.3, -1.0], &mut RngStream::new(4, 4)).unwrap();
    let y = d.decode(&[0.1, 0.2], &[0.3, -1.0], &mut RngStream::new(4, 4)).unwrap();
    assert_eq!(x, y);
    assert!(x.iter().all(|v| v.abs() <= 1.0));
}
