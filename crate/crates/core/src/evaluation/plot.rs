use std::fmt::Write;

use super::{pareto_front, TradeoffPoint};
use crate::training::PipelineKind;

const SIZE: f64 = 480.0;
const PAD: f64 = 48.0;

fn colour(kind: PipelineKind) -> &'static str {
    match kind {
        PipelineKind::Cbns => "#d62728",
        PipelineKind::AsAn => "#1f77b4",
        PipelineKind::AsOn => "#17becf",
        PipelineKind::OsAn => "#2ca02c",
        PipelineKind::Os => "#9467bd",
        PipelineKind::NoPrivacy => "#7f7f7f",
    }
}

/// Static SVG scatter of privacy (x) against utility (y) with the Pareto
/// front drawn as a staircase.
pub fn tradeoff_svg(points: &[TradeoffPoint]) -> String {
    let plot = SIZE - 2.0 * PAD;
    let x = |p: f64| PAD + p.clamp(0.0, 1.0) * plot;
    let y = |u: f64| SIZE - PAD - u.clamp(0.0, 1.0) * plot;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t:.2}</text>"#, x(t), SIZE - PAD + 16.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t:.2}</text>"#, PAD - 6.0, y(t) + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">privacy (attacker accuracy)</text>"#,
        SIZE / 2.0,
        SIZE - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">utility (user accuracy)</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );

    let mut front: Vec<(f64, f64)> = pareto_front(points).iter().map(|p| (p.privacy, p.utility)).collect();
    front.sort_by(|a, b| a.0.total_cmp(&b.0));
    if !front.is_empty() {
        let mut path = format!("M {:.1} {:.1}", x(front[0].0), y(0.0));
        for (i, &(p, u)) in front.iter().enumerate() {
            let _ = write!(path, " L {:.1} {:.1}", x(p), y(u));
            let next = front.get(i + 1).map_or(1.0, |q| q.0);
            let _ = write!(path, " L {:.1} {:.1}", x(next), y(u));
        }
        let _ = writeln!(s, r#"<path d="{path}" fill="none" stroke="black" stroke-dasharray="4 3"/>"#);
    }
    for p in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{}"><title>{} seed {}</title></circle>"#,
            x(p.privacy),
            y(p.utility),
            colour(p.kind),
            p.config_id,
            p.seed
        );
    }
    let mut kinds: Vec<PipelineKind> = points.iter().map(|p| p.kind).collect();
    kinds.sort();
    kinds.dedup();
    for (i, k) in kinds.iter().enumerate() {
        let ly = PAD + 14.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{ly:.1}" r="4" fill="{}"/>"#, SIZE - PAD - 90.0, colour(*k));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, SIZE - PAD - 80.0, ly + 4.0, k.name());
    }
    s.push_str("</svg>\n");
    s
}
