//! Fits grouped residual codebooks on synthetic frames and shows the error
//! each extra depth level removes.

use tokcascade::grvq::{fit_codebooks, synthetic_features};

fn main() -> tokcascade::Result<()> {
    let features = synthetic_features(4000, 16, 12, 1);
    let books = fit_codebooks(&features, 2, 2, 64, 3)?;
    for (d, mse) in books.mse_by_depth(&features)?.iter().enumerate() {
        println!("depths 0..={d}: mse {mse:.5}");
    }
    let frame = books.encode_frame(&features[0])?;
    println!("frame 0 codes {:?}", frame.codes);
    let rec = books.decode_frame(&frame)?;
    let err: f64 = features[0].iter().zip(&rec).map(|(a, b)| (a - b) * (a - b)).sum();
    println!("frame 0 squared error {err:.5}");
    Ok(())
}
