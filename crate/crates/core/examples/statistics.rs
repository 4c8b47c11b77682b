//! Fisher's exact test, the exact McNemar test and Krippendorff's alpha on
//! small hand-made inputs.
//!
//! cargo run --example statistics

use radcde::eval::{fisher_exact, krippendorff_alpha, mcnemar_exact, ContingencyTable2x2};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Cells: both correct, only A correct, only B correct, both wrong.
    for cells in [(3, 1, 1, 3), (10, 0, 0, 10), (19051, 48, 2867, 390)] {
        let t = ContingencyTable2x2::new(cells.0, cells.1, cells.2, cells.3);
        println!("{:?}  fisher {:.4e}  mcnemar {:.4e}", t.cells(), fisher_exact(&t)?, mcnemar_exact(&t));
    }

    // Three annotators labelling five findings; None marks a missing label.
    let labels = vec![
        vec![Some("present"), Some("absent"), Some("absent"), None, Some("unspecified")],
        vec![Some("present"), Some("absent"), Some("present"), Some("absent"), Some("unspecified")],
        vec![Some("present"), Some("absent"), Some("absent"), Some("absent"), Some("absent")],
    ];
    println!("alpha = {:.4}", krippendorff_alpha(&labels)?);
    Ok(())
}
