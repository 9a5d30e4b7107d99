use std::fmt::Write as _;

use seqdiff::data::LabelSet;
use seqdiff::sampling::{GenerationResult, PromptStream, SamplerOptions};
use serde_json::json;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

fn label_name(labels: &LabelSet, id: usize) -> &str {
    labels.name(id).unwrap_or("?")
}

/// Sample result as pretty JSON.
pub fn result_json(
    r: &GenerationResult,
    stream: &PromptStream,
    labels: &LabelSet,
    opts: &SamplerOptions,
    seed: u64,
) -> String {
    let mut start = 0;
    let segments: Vec<_> = stream
        .prompts()
        .iter()
        .map(|p| {
            let s = json!({ "label": label_name(labels, p.label), "start": start, "len": p.len });
            start += p.len;
            s
        })
        .collect();
    let f = r.sequence.frames();
    let frames: Vec<&[f64]> = (0..f.rows()).map(|i| f.row(i)).collect();
    let v = json!({
        "sampler": r.sampler,
        "seed": seed,
        "h": opts.past_frames,
        "ltr": opts.transition_len,
        "s": opts.guidance.scale,
        "past_mode": opts.past_mode,
        "segments": segments,
        "boundaries": r.boundaries,
        "transition_distances": r.transition_distances,
        "frames": frames,
    });
    let mut out = serde_json::to_string_pretty(&v).expect("result serializes");
    out.push('\n');
    out
}

/// `frame,segment,label,x,y,vx,vy` rows.
pub fn frames_csv(r: &GenerationResult, stream: &PromptStream, labels: &LabelSet) -> String {
    let mut out = String::from("frame,segment,label,x,y,vx,vy\n");
    let f = r.sequence.frames();
    let mut seg = 0;
    for i in 0..f.rows() {
        while seg < r.boundaries.len() && i >= r.boundaries[seg] {
            seg += 1;
        }
        let row = f.row(i);
        let name = label_name(labels, stream.prompts()[seg].label);
        let _ = writeln!(out, "{i},{seg},{name},{},{},{},{}", row[0], row[1], row[2], row[3]);
    }
    out
}

/// Position trace, one colour per segment, with a ring on every segment's first frame.
pub fn trace_svg(r: &GenerationResult, stream: &PromptStream, labels: &LabelSet) -> String {
    const SIZE: f64 = 480.0;
    const PAD: f64 = 24.0;
    let f = r.sequence.frames();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..f.rows() {
        x0 = x0.min(f.get(i, 0));
        x1 = x1.max(f.get(i, 0));
        y0 = y0.min(f.get(i, 1));
        y1 = y1.max(f.get(i, 1));
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let scale = (SIZE - 2.0 * PAD) / span;
    let px = |i: usize| (PAD + (f.get(i, 0) - x0) * scale, SIZE - PAD - (f.get(i, 1) - y0) * scale);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    for k in 0..r.num_segments() {
        let start = if k == 0 { 0 } else { r.boundaries[k - 1] };
        let end = r.boundaries.get(k).copied().unwrap_or(f.rows());
        // Start each polyline at the previous segment's last frame so the trace is unbroken.
        let from = start.saturating_sub(1);
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = (from..end)
            .map(|i| {
                let (x, y) = px(i);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let name = label_name(labels, stream.prompts()[k].label);
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"><title>{k}: {name}</title></polyline>"#,
            points.join(" ")
        );
        let (x, y) = px(start);
        let _ = writeln!(
            out,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="none" stroke="{color}" stroke-width="1.5"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" fill="{color}">{name}</text>"#,
            x + 6.0,
            y - 6.0
        );
    }
    out.push_str("</svg>\n");
    out
}
