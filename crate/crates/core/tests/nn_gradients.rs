use lact_core::nn::gradcheck::{check_mse, check_network, random_tensor, GradReport};
use lact_core::nn::{forward_eval, forward_train, NetworkSpec, ParamStore};

const TOL: f64 = 1e-5;

fn assert_ok(label: &str, r: GradReport) {
    assert!(r.checked > 0, "{label}: nothing checked");
    assert!(r.max_rel_error <= TOL, "{label}: max rel error {:.3e} at {}", r.max_rel_error, r.worst);
}

fn single(in_c: usize, build: impl FnOnce(&mut NetworkSpec) -> usize) -> NetworkSpec {
    let mut net = NetworkSpec::new(in_c);
    build(&mut net);
    net
}

fn check(label: &str, net: &NetworkSpec, shape: [usize; 4], seed: u64) {
    let params = ParamStore::<f64>::init(net, seed);
    let x = random_tensor(shape, seed + 100);
    assert_ok(label, check_network(net, &params, &x, seed + 200).unwrap());
}

#[test]
fn conv3x3_gradients() {
    let net = single(3, |n| n.conv3x3(0, 4).unwrap());
    check("conv3x3", &net, [2, 3, 6, 6], 1);
}

#[test]
fn conv1x1_gradients() {
    let net = single(3, |n| n.conv1x1(0, 2).unwrap());
    check("conv1x1", &net, [2, 3, 5, 4], 2);
}

#[test]
fn relu_gradients() {
    let net = single(2, |n| n.relu(0).unwrap());
    check("relu", &net, [2, 2, 4, 4], 3);
}

#[test]
fn batchnorm_gradients() {
    let mut net = NetworkSpec::new(3);
    let b = net.batchnorm(0).unwrap();
    net.conv1x1(b, 2).unwrap();
    let mut params = ParamStore::<f64>::init(&net, 4);
    for (i, v) in params.params.get_mut("1.gamma").unwrap().data.iter_mut().enumerate() {
        *v = 0.5 + i as f64;
    }
    let x = random_tensor([2, 3, 4, 4], 5).map(|v| 2.0 * v + 1.0);
    assert_ok("batchnorm", check_network(&net, &params, &x, 6).unwrap());
}

#[test]
fn pooling_gradients() {
    let net = single(2, |n| n.maxpool2(0).unwrap());
    check("maxpool2", &net, [2, 2, 6, 4], 7);
    let net = single(2, |n| n.avgunpool2(0).unwrap());
    check("avgunpool2", &net, [2, 2, 3, 2], 8);
}

#[test]
fn concat_gradients_with_fan_out() {
    let mut net = NetworkSpec::new(2);
    let c = net.conv3x3(0, 3).unwrap();
    let j = net.concat(0, c).unwrap();
    net.conv1x1(j, 1).unwrap();
    check("concat", &net, [2, 2, 4, 4], 9);
}

#[test]
fn mse_gradient() {
    let p = random_tensor([2, 3, 4, 4], 10);
    let t = random_tensor([2, 3, 4, 4], 11);
    let r = check_mse(&p, &t).unwrap();
    assert!(r.max_rel_error <= 1e-8, "mse: {:.3e} at {}", r.max_rel_error, r.worst);
}

#[test]
fn toy_network_gradients() {
    let mut net = NetworkSpec::new(1);
    let c = net.conv3x3(0, 3).unwrap();
    let r = net.relu(c).unwrap();
    let b = net.batchnorm(r).unwrap();
    net.conv1x1(b, 1).unwrap();
    check("toy", &net, [2, 1, 6, 6], 12);
}

#[test]
fn single_conv_network_matches_layer() {
    let net = single(1, |n| n.conv3x3(0, 1).unwrap());
    let mut params = ParamStore::<f64>::init(&net, 0);
    let w = &mut params.params.get_mut("1.weight").unwrap().data;
    w.iter_mut().for_each(|v| *v = 0.0);
    w[4] = 1.0;
    let x = random_tensor([1, 1, 5, 5], 1);
    assert_eq!(forward_eval(&net, &params, &x).unwrap(), x);
}

#[test]
fn eval_forward_is_pure() {
    let mut net = NetworkSpec::new(1);
    let c = net.conv3x3(0, 4).unwrap();
    let b = net.batchnorm(c).unwrap();
    let p = net.maxpool2(b).unwrap();
    let u = net.avgunpool2(p).unwrap();
    let j = net.concat(b, u).unwrap();
    net.conv1x1(j, 1).unwrap();
    let mut params = ParamStore::<f32>::init(&net, 5);
    let x = random_tensor([2, 1, 8, 8], 6).cast::<f32>();
    forward_train(&net, &mut params, &x).unwrap();
    let before = params.clone();
    let a = forward_eval(&net, &params, &x).unwrap();
    let b = forward_eval(&net, &params, &x).unwrap();
    assert_eq!(a.data(), b.data());
    assert_eq!(params, before);
}

#[test]
fn graph_validation() {
    use lact_core::nn::{LayerKind, LayerSpec};
    let input = LayerSpec { kind: LayerKind::Input, in_channels: 1, out_channels: 1, inputs: vec![] };
    let relu = |src: usize| LayerSpec { kind: LayerKind::Relu, in_channels: 1, out_channels: 1, inputs: vec![src] };
    assert!(NetworkSpec::from_layers(vec![input.clone(), relu(0), relu(1)]).is_ok());
    assert!(NetworkSpec::from_layers(vec![input.clone(), relu(2), relu(1)]).is_err());
    assert!(NetworkSpec::from_layers(vec![input.clone(), relu(1)]).is_err());
    let bad_conv = LayerSpec { kind: LayerKind::Conv3x3, in_channels: 2, out_channels: 4, inputs: vec![0] };
    assert!(NetworkSpec::from_layers(vec![input, bad_conv]).is_err());
    let mut net = NetworkSpec::new(2);
    let c = net.conv3x3(0, 4).unwrap();
    assert_eq!(net.nodes()[c].in_channels, 2);
    assert!(net.conv3x3(9, 4).is_err());
    let x = random_tensor([1, 3, 4, 4], 0);
    let params = ParamStore::<f64>::init(&net, 0);
    assert!(forward_eval(&net, &params, &x).is_err());
}

#[test]
fn depth3_unet_gradients() {
    use lact_core::models::{build_arch, ArchKind, ArchSpec};
    let net = build_arch(&ArchSpec::new(ArchKind::ImageUnet, 3, 2)).unwrap();
    assert_eq!(net.pool_depth(), 3);
    check("unet depth 3", &net, [2, 1, 16, 16], 11);
}

#[test]
fn entries_at_relu_kinks_are_skipped() {
    let net = single(1, |n| n.relu(0).unwrap());
    let params = ParamStore::<f64>::init(&net, 1);
    let mut x = random_tensor([1, 1, 4, 4], 12);
    x.data_mut()[3] = 0.0;
    let r = check_network(&net, &params, &x, 13).unwrap();
    assert_eq!((r.checked, r.skipped_kinks), (15, 1));
    assert!(r.max_rel_error <= TOL);
}
