//! Scores hand-made saliency maps with max F-measure, MAE and S-measure.

use gatenet::metrics::{evaluate, f_beta, mae, s_measure, BinaryMask, ScoreMap, BETA2, S_ALPHA};

fn main() -> gatenet::Result<()> {
    let (h, w) = (8, 8);
    let gt = BinaryMask::new(h, w, (0..h * w).map(|i| (2..6).contains(&(i / w)) && (2..6).contains(&(i % w))).collect())?;

    let perfect = ScoreMap::new(h, w, gt.values().iter().map(|&b| b as u8 as f64).collect())?;
    let blurry = ScoreMap::new(
        h,
        w,
        (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64 - 3.5, (i % w) as f64 - 3.5);
                (-(x * x + y * y) / 8.0).exp()
            })
            .collect(),
    )?;
    let flat = ScoreMap::new(h, w, vec![0.5; h * w])?;

    for (name, pred) in [("perfect", &perfect), ("blurry", &blurry), ("flat", &flat)] {
        let report = evaluate(std::slice::from_ref(pred), std::slice::from_ref(&gt))?;
        println!(
            "{name:>8}: maxF {:.4}  MAE {:.4}  S {:.4}",
            report.f_beta_max,
            mae(pred, &gt)?,
            s_measure(pred, &gt, S_ALPHA)?
        );
    }
    println!("F_beta(p=0.8, r=0.5) = {:.5}", f_beta(0.8, 0.5, BETA2));
    Ok(())
}
