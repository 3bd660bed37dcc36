//! SVG line charts of RD curves.

use std::fmt::Write as _;

use crate::metrics::RdPoint;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 7] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// PSNR against bits per point, one polyline per named series.
pub fn render_rd_svg(title: &str, y_label: &str, series: &[(String, Vec<RdPoint>)]) -> String {
    let all: Vec<&RdPoint> = series
        .iter()
        .flat_map(|(_, p)| p)
        .filter(|p| p.psnr_db.is_finite())
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in &all {
        x0 = x0.min(p.bpp);
        x1 = x1.max(p.bpp);
        y0 = y0.min(p.psnr_db);
        y1 = y1.max(p.psnr_db);
    }
    if all.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 <= 0.0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let w = &mut s;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        w,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    )
    .unwrap();
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    writeln!(
        w,
        r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" stroke="black" fill="none"/>"#
    )
    .unwrap();
    for i in 0..=4 {
        let f = f64::from(i) / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        writeln!(
            w,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{xv:.3}</text>"#,
            sx(xv),
            bottom + 18.0
        )
        .unwrap();
        writeln!(
            w,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{yv:.2}</text>"#,
            left - 6.0,
            sy(yv) + 4.0
        )
        .unwrap();
    }
    writeln!(
        w,
        r#"<text x="{}" y="{}" text-anchor="middle">bits per point</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0
    )
    .unwrap();
    writeln!(
        w,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    )
    .unwrap();
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut pts: Vec<&RdPoint> = pts.iter().filter(|p| p.psnr_db.is_finite()).collect();
        pts.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        let path: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.1},{:.1}", sx(p.bpp), sy(p.psnr_db)))
            .collect();
        if !path.is_empty() {
            writeln!(
                w,
                r#"<polyline points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#,
                path.join(" ")
            )
            .unwrap();
        }
        for p in &pts {
            writeln!(
                w,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                sx(p.bpp),
                sy(p.psnr_db)
            )
            .unwrap();
        }
        let ly = top + 16.0 * k as f64;
        writeln!(
            w,
            r#"<text x="{}" y="{ly}" fill="{color}">{}</text>"#,
            right - 80.0,
            escape(name)
        )
        .unwrap();
    }
    w.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_every_series() {
        let a = vec![
            RdPoint {
                bpp: 0.1,
                psnr_db: 50.0,
            },
            RdPoint {
                bpp: 0.3,
                psnr_db: 55.0,
            },
        ];
        let b = vec![RdPoint {
            bpp: 0.2,
            psnr_db: f64::INFINITY,
        }];
        let svg = render_rd_svg(
            "cloud <1>",
            "D1 PSNR (dB)",
            &[("c1".into(), a), ("c2".into(), b)],
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("cloud &lt;1&gt;"));
        assert!(render_rd_svg("empty", "y", &[]).contains("</svg>"));
    }
}
