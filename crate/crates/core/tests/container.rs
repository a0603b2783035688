use tempfile::TempDir;

use tinymask::engine::Interpreter;
use tinymask::modelio::{load, read_header, save, Flavor, FloatModel, Model, HEADER_LEN};
use tinymask::netgraph::{build_network, zoo};
use tinymask::quantizer::{calibrate, quantize_model};
use tinymask::tensor::Tensor;
use tinymask::Error;

#[test]
fn saved_models_reload_and_predict_identically() {
    let dir = TempDir::new().unwrap();
    let (net, params) = build_network(zoo("squeezenet-mask-small").unwrap(), 4).unwrap();
    let rep = Tensor::from_vec(
        net.input_shape().with_batch(3),
        (0..3 * net.input_shape().item_len()).map(|i| (i % 97) as f32 / 97.0).collect(),
    )
    .unwrap();
    let qm = quantize_model(&net, &params, &calibrate(&net, &params, &rep).unwrap()).unwrap();

    let float_path = dir.path().join("f.tqm");
    let int8_path = dir.path().join("nested/q.tqm");
    let float = Model::Float(FloatModel::new(net.config().clone(), params).unwrap());
    std::fs::create_dir_all(int8_path.parent().unwrap()).unwrap();
    let fb = save(&float_path, &float).unwrap();
    let qb = save(&int8_path, &Model::Int8(qm.clone())).unwrap();
    assert_eq!(fb, std::fs::metadata(&float_path).unwrap().len());
    assert!(qb < fb);

    assert_eq!(load(&float_path).unwrap(), float);
    let Model::Int8(back) = load(&int8_path).unwrap() else {
        panic!("flavor changed on reload")
    };
    let before = Interpreter::new(&qm, usize::MAX).unwrap().invoke_batch(&rep).unwrap();
    let after = Interpreter::new(&back, usize::MAX).unwrap().invoke_batch(&rep).unwrap();
    assert_eq!(before, after);

    let bytes = std::fs::read(&int8_path).unwrap();
    let (header, payload) = read_header(&bytes).unwrap();
    assert_eq!(header.flavor, Flavor::Int8);
    assert_eq!(payload.len(), header.payload_len as usize);
    assert_eq!(bytes.len(), HEADER_LEN + payload.len() + 4);
}

#[test]
fn missing_file_is_io_error_with_path() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("absent.tqm");
    let err = load(&path).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("absent.tqm"));
    assert!(err.is_usage_or_data());
}
