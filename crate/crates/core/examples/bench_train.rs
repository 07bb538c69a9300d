use std::path::Path;
use std::time::Instant;
use encp_core::cipher::{encrypt_dataset, CipherConfig};
use encp_core::data::load_idx;
use encp_core::mlp::{accuracy, init_model, train, Arch, TrainConfig, TrainData};

fn main() {
    let dir = Path::new("data/mnist");
    let t0 = Instant::now();
    let train_set = load_idx(&dir.join("train-images-idx3-ubyte.gz"), &dir.join("train-labels-idx1-ubyte.gz")).unwrap();
    let test_set = load_idx(&dir.join("t10k-images-idx3-ubyte.gz"), &dir.join("t10k-labels-idx1-ubyte.gz")).unwrap();
    println!("load: {:?} ({} train, {} test)", t0.elapsed(), train_set.count(), test_set.count());

    let t1 = Instant::now();
    let cfg_c = CipherConfig::reference_fixed();
    let enc_train = encrypt_dataset(&train_set, &cfg_c).unwrap();
    let enc_test = encrypt_dataset(&test_set, &cfg_c).unwrap();
    println!("encrypt 70k: {:?}", t1.elapsed());

    let tr = TrainData::from_set(&train_set);
    let te = TrainData::from_set(&test_set);
    let model = init_model(&Arch::reference(), 2024).unwrap();
    let t2 = Instant::now();
    let cfg = TrainConfig { epochs: 4, ..TrainConfig::default() };
    let (m, trace) = train(model, &tr, &cfg, Some(&te)).unwrap();
    println!("4 epochs plaintext: {:?}", t2.elapsed());
    for (i, e) in trace.epochs.iter().enumerate() {
        println!("  epoch {}: loss={:.4} acc={:?}", i + 1, e.mean_loss, e.eval_accuracy);
    }
    let _ = (m, enc_train, enc_test);
}
