use canet::formats::*;
use canet_core::model::{Canet, CanetConfig};
use canet_core::{rng_from_seed, Tensor};

fn tiny_cfg() -> CanetConfig {
    let mut cfg = CanetConfig::new("tiny", 3, (32, 32)).unwrap();
    cfg.fca.fusion_channels = 8;
    cfg.deconv_channels = 8;
    cfg
}

/// A model whose running statistics differ from any fresh init.
fn trained_like() -> Canet<f32> {
    let mut m = Canet::new(tiny_cfg(), 7).unwrap();
    m.params.init_identity_stats();
    let names: Vec<String> = m.params.iter().map(|(n, _, _)| n.to_string()).collect();
    for (i, n) in names.iter().enumerate() {
        for v in m.params.get_mut(n).unwrap().data_mut() {
            *v += 0.01 * i as f32;
        }
    }
    m
}

#[test]
fn ctnsr_layout_matches_hand_encoding() {
    let t = Tensor::from_vec(&[2, 1], vec![1.0f32, -2.5]).unwrap();
    let mut want = b"CTNSR1".to_vec();
    for v in [2u32, 2, 1] {
        want.extend_from_slice(&v.to_le_bytes());
    }
    want.extend_from_slice(&1.0f32.to_le_bytes());
    want.extend_from_slice(&(-2.5f32).to_le_bytes());
    assert_eq!(encode_ctnsr(&t), want);
    assert_eq!(decode_ctnsr(&want).unwrap(), t);
}

#[test]
fn ctnsr_round_trips_every_rank() {
    let mut r = rng_from_seed(1);
    for shape in [vec![5], vec![2, 3], vec![1, 3, 4, 5], vec![2, 1, 1, 2, 3]] {
        let t = Tensor::<f32>::uniform(&shape, -1e3, 1e3, &mut r);
        let b = encode_ctnsr(&t);
        assert_eq!(b.len(), 10 + 4 * shape.len() + 4 * t.numel());
        assert_eq!(decode_ctnsr(&b).unwrap(), t);
    }
}

#[test]
fn ctnsr_rejects_damage() {
    let b = encode_ctnsr(&Tensor::from_vec(&[3], vec![1.0f32, 2.0, 3.0]).unwrap());
    for cut in 0..b.len() {
        assert!(decode_ctnsr(&b[..cut]).is_err(), "prefix {cut}");
    }
    let mut flipped = b.clone();
    flipped[0] ^= 1;
    assert!(decode_ctnsr(&flipped).unwrap_err().0.contains("magic"));
    let mut zero = b"CTNSR1".to_vec();
    zero.extend_from_slice(&[1, 0, 0, 0, 0, 0, 0, 0]);
    assert!(decode_ctnsr(&zero).is_err());
    let mut extra = b.clone();
    extra.push(0);
    assert!(decode_ctnsr(&extra).unwrap_err().0.contains("trailing"));
}

#[test]
fn canw_layout_matches_hand_encoding() {
    let mut store = canet_core::ParamStore::new();
    store.insert("a.w", canet_core::params::ParamKind::Learnable, Tensor::from_vec(&[1], vec![0.5f32]).unwrap()).unwrap();
    let mut want = b"CANW1\0".to_vec();
    want.extend_from_slice(&1u32.to_le_bytes());
    want.extend_from_slice(&3u16.to_le_bytes());
    want.extend_from_slice(b"a.w");
    want.extend_from_slice(&1u32.to_le_bytes());
    want.extend_from_slice(&1u32.to_le_bytes());
    want.extend_from_slice(&0.5f32.to_le_bytes());
    assert_eq!(encode_canw(&store), want);
    assert_eq!(decode_canw(&want).unwrap(), vec![("a.w".to_string(), Tensor::from_vec(&[1], vec![0.5f32]).unwrap())]);
}

#[test]
fn canw_save_load_save_is_byte_identical() {
    let m = trained_like();
    let bytes = encode_canw(&m.params);
    let loaded = load_weights(&m.config, &bytes).unwrap();
    assert_eq!(loaded, m.params, "values, kinds and batch-norm layers survive");
    assert!(loaded.has_running_stats());
    assert_eq!(encode_canw(&loaded), bytes);
    let names: Vec<String> = decode_canw(&bytes).unwrap().into_iter().map(|(n, _)| n).collect();
    assert!(names.iter().any(|n| n == "spatial.layer2.dw.weight"), "{names:?}");
    assert!(names.iter().any(|n| n.ends_with(".running_var")));
}

#[test]
fn canw_shape_mismatch_names_tensor_and_shapes() {
    let m = trained_like();
    let mut other = tiny_cfg();
    other.deconv_channels = 16;
    let err = load_weights(&other, &encode_canw(&m.params)).unwrap_err().0;
    assert!(err.contains("deconv") && err.contains("expects"), "{err}");
    let fresh: Canet<f32> = Canet::new(other, 0).unwrap();
    let name = &err[err.find('`').unwrap() + 1..err.rfind('`').unwrap()];
    let want = format!("{:?}", fresh.params.get(name).unwrap().shape());
    let have = format!("{:?}", m.params.get(name).unwrap().shape());
    assert!(err.contains(&want) && err.contains(&have), "{err}");
}

#[test]
fn canw_rejects_unknown_missing_and_damaged_files() {
    let m = trained_like();
    let mut extra = m.params.clone();
    extra.insert("bogus.weight", canet_core::params::ParamKind::Learnable, Tensor::zeros(&[2])).unwrap();
    assert!(load_weights(&m.config, &encode_canw(&extra)).unwrap_err().0.contains("unknown tensor `bogus.weight`"));

    let mut small = canet_core::ParamStore::new();
    let (n, _, t) = m.params.iter().next().unwrap();
    small.insert(n, canet_core::params::ParamKind::Learnable, t.clone()).unwrap();
    assert!(load_weights(&m.config, &encode_canw(&small)).unwrap_err().0.contains("lacks"));

    let bytes = encode_canw(&m.params);
    let mut flipped = bytes.clone();
    flipped[5] = b'!';
    assert!(decode_canw(&flipped).unwrap_err().0.contains("magic"));
    for cut in [0, 5, 9, 12, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode_canw(&bytes[..cut]).is_err(), "prefix {cut}");
    }
}

#[test]
fn pgm_round_trip_and_header_comments() {
    let px: Vec<u8> = (0..12).map(|i| if i == 5 { 255 } else { i as u8 % 3 }).collect();
    let b = encode_pgm(3, 4, &px);
    assert!(b.starts_with(b"P5\n4 3\n255\n"));
    assert_eq!(decode_pgm(&b).unwrap(), (3, 4, px.clone()));
    let mut commented = b"P5 # label map\n4\t3 # w h\n255\n".to_vec();
    commented.extend_from_slice(&px);
    assert_eq!(decode_pgm(&commented).unwrap(), (3, 4, px.clone()));
    assert!(decode_pgm(&b[..b.len() - 1]).unwrap_err().0.contains("truncated"));
    assert!(decode_pgm(b"P5\n4 3\n65535\n").unwrap_err().0.contains("8-bit"));
    assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
}

#[test]
fn ppm_round_trip_is_exact_on_byte_values() {
    let mut r = rng_from_seed(3);
    let raw = Tensor::<f32>::uniform(&[3, 5, 7], 0.0, 1.0, &mut r);
    let q = raw.map(|v| (v * 255.0).round() / 255.0);
    let b = encode_ppm(&q).unwrap();
    assert!(b.starts_with(b"P6\n7 5\n255\n"));
    assert_eq!(b.len(), 11 + 3 * 35);
    let back = decode_ppm(&b).unwrap();
    assert_eq!(back.shape(), &[3, 5, 7]);
    for (a, c) in back.data().iter().zip(q.data()) {
        assert!((a - c).abs() < 1e-7);
    }
    assert_eq!(encode_ppm(&back).unwrap(), b);
    assert!(encode_ppm(&Tensor::zeros(&[1, 2, 2])).is_err());
}
