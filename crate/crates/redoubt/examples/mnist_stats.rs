//! Dataset sanity numbers straight from the IDX files: split sizes, label
//! histogram, and pixel statistics. A useful calibration point: the mean
//! squared distance of a digit from an all-black image is about 0.1, so
//! autoencoder reconstruction losses well below that actually encode
//! something.

use redoubt::data::{default_data_dir, load_split};
use redoubt::Result;

fn main() -> Result<()> {
    let dir = default_data_dir();
    println!("data dir: {}", dir.display());
    for (name, train) in [("train", true), ("test", false)] {
        let set = load_split(&dir, train)?;
        let mut hist = [0usize; 10];
        for &l in &set.labels {
            hist[l as usize] += 1;
        }
        let n_pix = set.images.data().len() as f64;
        let mean: f64 = set.images.data().iter().sum::<f64>() / n_pix;
        let sq: f64 = set.images.data().iter().map(|v| v * v).sum::<f64>() / n_pix;
        println!("{name}: {} images", set.len());
        println!("  labels: {hist:?}");
        println!("  mean pixel {mean:.4}, mse vs black {sq:.4}");
    }
    Ok(())
}
