use proptest::prelude::*;
use shufflerl::nn::{
    conv_output_len, init_params, Array4, BatchNorm2d, CnnShapes, CnnSpec, Conv2d, ConvSpec, ExtractorSpec, Mode,
    NetworkSpec, NnError,
};

#[test]
fn conv_output_formula_holds_for_all_small_dims() {
    for input in 1..=12usize {
        for kernel in 1..=input {
            for stride in 1..=12usize {
                let want = (input - kernel) / stride + 1;
                assert_eq!(conv_output_len(input, kernel, stride), Some(want));
                let conv = Conv2d::zeros(1, 1, [kernel, 1], [stride, 1]);
                let y = conv.forward(&Array4::zeros([1, 1, input, 1])).unwrap();
                assert_eq!(y.shape(), [1, 1, want, 1]);
            }
        }
    }
}

#[test]
fn default_extractor_shapes() {
    let s = CnnShapes::trace(&CnnSpec::default(), 90, 511).unwrap();
    assert_eq!(s.conv1, [16, 21, 126]);
    assert_eq!(s.conv2, [32, 9, 62]);
    assert_eq!(s.flattened, 32 * 9 * 62);
    assert_eq!(s.embedding, 256);
}

#[test]
fn non_finite_input_names_the_first_layer() {
    let cnn = CnnSpec {
        conv1: ConvSpec {
            channels: 2,
            kernel: [2, 2],
            stride: [1, 1],
        },
        conv2: ConvSpec {
            channels: 2,
            kernel: [2, 2],
            stride: [1, 1],
        },
        embedding: 4,
    };
    let net = init_params(3, &NetworkSpec::new(4, 5, 2, ExtractorSpec::Cnn(cnn))).unwrap();
    let mut window = [0.5; 20];
    window[7] = f64::NAN;
    let err = net.infer(&net.batch_input([&window[..]]).unwrap()).unwrap_err();
    match err {
        NnError::NonFinite { layer, .. } => assert_eq!(layer, "conv1"),
        other => panic!("unexpected error {other}"),
    }
}

fn batch(values: Vec<f64>) -> Array4 {
    Array4::from_vec([8, 4, 6, 6], values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn train_mode_batch_norm_standardizes_each_channel(
        values in prop::collection::vec(-50.0f64..50.0, 8 * 4 * 36),
        shift in -1e3f64..1e3,
    ) {
        let x = batch(values.iter().map(|v| v + shift).collect());
        let bn = BatchNorm2d::new(4);
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for c in 0..4 {
            let vals: Vec<f64> = (0..8).flat_map(|b| y.data()[(b * 4 + c) * 36..][..36].to_vec()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-5);
            prop_assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn inference_is_pure(seed in 0u64..500, values in prop::collection::vec(-5.0f64..5.0, 24)) {
        let cnn = CnnSpec {
            conv1: ConvSpec { channels: 3, kernel: [2, 2], stride: [1, 1] },
            conv2: ConvSpec { channels: 2, kernel: [2, 2], stride: [1, 2] },
            embedding: 5,
        };
        let net = init_params(seed, &NetworkSpec::new(4, 6, 2, ExtractorSpec::Cnn(cnn))).unwrap();
        let before = net.clone();
        let x = net.batch_input([&values[..]]).unwrap();
        let a = net.infer(&x).unwrap();
        let b = net.infer(&x).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(net, before);
    }
}
