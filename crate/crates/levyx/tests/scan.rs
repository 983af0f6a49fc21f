//! Scratch scan (temporary).

use levyx::basis::two_point_taylor_expand;
use levyx::models::preset;
use levyx::pricing::{implied_vol, price_batch, PricingRequest};
use levyx::transform::PayoffTransform;

#[test]
fn scan_two_point_offset() {
    let rows = [
        (0.50, -0.6931, 0.0014, 0.4631),
        (0.50, -0.4185, 0.0070, 0.4000),
        (0.50, -0.1438, 0.0363, 0.3336),
        (0.50, 0.1308, 0.1702, 0.2727),
        (0.50, 0.4055, 0.5011, 0.2615),
        (1.00, -0.9163, 0.0028, 0.4687),
        (1.00, -0.5697, 0.0109, 0.4057),
        (1.00, -0.2231, 0.0473, 0.3434),
        (1.00, 0.1234, 0.1970, 0.2836),
        (1.00, 0.4700, 0.6033, 0.2452),
    ];
    let model = preset("cev-vg").unwrap();
    for n_max in [3usize, 4, 5] {
        for delta in [0.05, 0.075, 0.1] {
            let e = two_point_taylor_expand(&model, -delta, delta, 1.0, n_max).unwrap();
            let mut worst_u = 0.0f64;
            let mut worst_iv = 0.0f64;
            let mut n_ok = 0usize;
            for r in &rows {
                let req = PricingRequest::new(PayoffTransform::Put { log_strike: r.1 }, r.0);
                let v = levyx::pricing::price(&e, &req).unwrap().value;
                let iv = implied_vol(v, true, 0.0, r.1, r.0).unwrap();
                worst_u = worst_u.max((v - r.2).abs());
                worst_iv = worst_iv.max((iv - r.3).abs());
                if (v - r.2).abs() <= 5e-4 && (iv - r.3).abs() <= 2e-3 {
                    n_ok += 1;
                }
                if r.1 < -0.55 || r.1 > 0.4 {
                    eprintln!(
                        "  n={n_max} d={delta:4.2} tau={} k={:+.4}: u={v:.6} du={:+.2e} div={:+.2e}",
                        r.0,
                        r.1,
                        v - r.2,
                        iv - r.3
                    );
                }
            }
            eprintln!(
                "n={n_max} d={delta:4.2}: rows_ok={n_ok}/10 max|du|={worst_u:.2e} max|div|={worst_iv:.2e}"
            );
        }
    }
}
