//! Heatmap images of a field and its gradient.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::expr::Expr;
use crate::instance::{mask_point, Instance, MASK_FRACTION};
use crate::numeric::Program;
use crate::scenario::{scenario_by_slug, Domain};

pub const RENDER_N: usize = 200;
pub const PANEL: u32 = 480;
pub const BAR_STRIP: u32 = 80;
pub const FIELD_WIDTH: u32 = PANEL + BAR_STRIP;
pub const GRADIENT_WIDTH: u32 = 2 * PANEL + BAR_STRIP;
pub const HEIGHT: u32 = PANEL;
pub const TICKS: usize = 5;
/// Colormap index used for pixels whose value could not be computed.
pub const SENTINEL_INDEX: usize = 255;
const MAX_FAILED_FRACTION: f64 = 0.01;
const CLIP_PERCENTILES: (f64, f64) = (0.5, 99.5);

const BACKGROUND: [u8; 3] = [255, 255, 255];
const INK: [u8; 3] = [0, 0, 0];

pub fn colormap() -> &'static [[u8; 3]; 256] {
    static LUT: OnceLock<[[u8; 3]; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = [[0u8; 3]; 256];
        let rows = include_str!("../assets/viridis.txt").lines().filter(|l| !l.starts_with('#'));
        let mut count = 0;
        for (slot, line) in lut.iter_mut().zip(rows) {
            let v = u32::from_str_radix(line.trim(), 16).expect("colormap entries are hex");
            *slot = [(v >> 16) as u8, (v >> 8) as u8, v as u8];
            count += 1;
        }
        assert_eq!(count, 256, "colormap must have 256 entries");
        lut
    })
}

/// Value range shown by one colorbar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl ValueRange {
    /// Degenerate ranges are padded by 0.5 on each side.
    pub fn new(lo: f64, hi: f64) -> ValueRange {
        if hi - lo > 0.0 {
            ValueRange { lo, hi }
        } else {
            ValueRange { lo: lo - 0.5, hi: hi + 0.5 }
        }
    }

    pub fn index(&self, v: f64) -> usize {
        let t = ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0);
        (t * 255.0).round() as usize
    }

    pub fn ticks(&self) -> [f64; TICKS] {
        std::array::from_fn(|k| self.lo + (self.hi - self.lo) * k as f64 / (TICKS - 1) as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelRanges {
    pub u: ValueRange,
    pub du_dx: ValueRange,
    pub du_dy: ValueRange,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedPair {
    pub field_png: Vec<u8>,
    pub gradients_png: Vec<u8>,
    pub resolution: usize,
    pub colormap: &'static str,
    pub ranges: PanelRanges,
}

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("{what}: {failed} of {total} render pixels failed to evaluate")]
    TooManyFailures { what: &'static str, failed: usize, total: usize },
    #[error(transparent)]
    Instance(#[from] crate::instance::GenerateError),
    #[error("png encoding: {0}")]
    Encode(#[from] png::EncodingError),
}

/// A sampled panel: `n x n` values, row-major from `y_min` upward, `None`
/// where evaluation failed.
pub struct Sampled {
    pub n: usize,
    pub values: Vec<Option<f64>>,
}

pub fn sample(e: &Expr, domain: Domain, n: usize, singular: &[(f64, f64)]) -> Sampled {
    let program = Program::compile(e);
    let mut stack = Vec::new();
    let radius = MASK_FRACTION * domain.min_extent();
    let values = domain
        .cell_centered_grid(n)
        .into_iter()
        .map(|p| {
            let p = if singular.is_empty() { p } else { mask_point(p, singular, radius) };
            program.run(&[], p.x, p.y, &mut stack).ok()
        })
        .collect();
    Sampled { n, values }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let t = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - t) + sorted[i + 1] * t
    } else {
        sorted[i]
    }
}

impl Sampled {
    fn range(&self, what: &'static str, clip: bool) -> Result<ValueRange, RenderError> {
        let mut ok: Vec<f64> = self.values.iter().flatten().copied().collect();
        let failed = self.values.len() - ok.len();
        if failed as f64 > MAX_FAILED_FRACTION * self.values.len() as f64 || ok.is_empty() {
            return Err(RenderError::TooManyFailures { what, failed, total: self.values.len() });
        }
        ok.sort_by(f64::total_cmp);
        let (lo, hi) = if clip {
            (percentile(&ok, CLIP_PERCENTILES.0), percentile(&ok, CLIP_PERCENTILES.1))
        } else {
            (ok[0], ok[ok.len() - 1])
        };
        Ok(ValueRange::new(lo, hi))
    }
}

struct Canvas {
    width: u32,
    height: u32,
    rgb: Vec<u8>,
}

impl Canvas {
    fn new(width: u32, height: u32) -> Canvas {
        let rgb = BACKGROUND.iter().copied().cycle().take((width * height * 3) as usize).collect();
        Canvas { width, height, rgb }
    }

    fn put(&mut self, x: u32, y: u32, c: [u8; 3]) {
        if x < self.width && y < self.height {
            let k = ((y * self.width + x) * 3) as usize;
            self.rgb[k..k + 3].copy_from_slice(&c);
        }
    }

    fn rect(&mut self, x: u32, y: u32, w: u32, h: u32, c: [u8; 3]) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, c);
            }
        }
    }

    fn frame(&mut self, x: u32, y: u32, w: u32, h: u32) {
        self.rect(x - 1, y - 1, w + 2, 1, INK);
        self.rect(x - 1, y + h, w + 2, 1, INK);
        self.rect(x - 1, y, 1, h, INK);
        self.rect(x + w, y, 1, h, INK);
    }

    fn text(&mut self, x: u32, y: u32, s: &str) {
        for (k, ch) in s.chars().enumerate() {
            let rows = glyph(ch);
            for (r, bits) in rows.iter().enumerate() {
                for col in 0..5 {
                    if bits & (0b10000 >> col) != 0 {
                        self.put(x + k as u32 * GLYPH_ADVANCE + col, y + r as u32, INK);
                    }
                }
            }
        }
    }

    fn text_right(&mut self, right: u32, y: u32, s: &str) {
        let w = s.chars().count() as u32 * GLYPH_ADVANCE;
        self.text(right.saturating_sub(w), y, s);
    }

    fn encode(&self) -> Result<Vec<u8>, png::EncodingError> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header()?;
            writer.write_image_data(&self.rgb)?;
        }
        Ok(out)
    }
}

pub fn tick_label(v: f64) -> String {
    format!("{v:.2e}")
}

/// Geometry of one heatmap with its colorbar.
struct PanelLayout {
    left: u32,
    top: u32,
    size: u32,
    bar_left: u32,
}

fn draw_panel(c: &mut Canvas, layout: &PanelLayout, s: &Sampled, range: ValueRange, title: &str, d: Domain) {
    let lut = colormap();
    let PanelLayout { left, top, size, bar_left } = *layout;
    for py in 0..size {
        // image rows run downward, grid rows upward
        let j = s.n - 1 - (py as usize * s.n / size as usize);
        for px in 0..size {
            let i = px as usize * s.n / size as usize;
            let idx = match s.values[j * s.n + i] {
                Some(v) => range.index(v),
                None => SENTINEL_INDEX,
            };
            c.put(left + px, top + py, lut[idx]);
        }
    }
    c.frame(left, top, size, size);
    c.text(left + size / 2 - title.len() as u32 * GLYPH_ADVANCE / 2, top - 20, title);
    let below = top + size + 6;
    c.text(left, below, &tick_label(d.x_min));
    c.text_right(left + size, below, &tick_label(d.x_max));
    c.text(left + size / 2 - 2, below + 12, "x");
    c.text_right(left - 4, top + size - 7, &tick_label(d.y_min));
    c.text_right(left - 4, top, &tick_label(d.y_max));
    c.text_right(left - 4, top + size / 2 - 3, "y");

    let bar_w = 12;
    for py in 0..size {
        let idx = 255 - (py as usize * 256 / size as usize).min(255);
        c.rect(bar_left, top + py, bar_w, 1, lut[idx]);
    }
    c.frame(bar_left, top, bar_w, size);
    for (k, t) in range.ticks().iter().enumerate() {
        let y = top + size - 1 - (k as u32 * (size - 1) / (TICKS as u32 - 1));
        c.rect(bar_left + bar_w, y, 3, 1, INK);
        c.text(bar_left + bar_w + 5, y.saturating_sub(3), &tick_label(*t));
    }
}

/// Renders a field and its two partial derivatives.
pub fn render_exprs(u: &Expr, dx: &Expr, dy: &Expr, domain: Domain, singular: &[(f64, f64)]) -> Result<RenderedPair, RenderError> {
    let clip = !singular.is_empty();
    let su = sample(u, domain, RENDER_N, singular);
    let sx = sample(dx, domain, RENDER_N, singular);
    let sy = sample(dy, domain, RENDER_N, singular);
    let ranges = PanelRanges { u: su.range("u", clip)?, du_dx: sx.range("du/dx", clip)?, du_dy: sy.range("du/dy", clip)? };

    let mut field = Canvas::new(FIELD_WIDTH, HEIGHT);
    let field_layout = PanelLayout { left: 64, top: 36, size: 400, bar_left: PANEL + 4 };
    draw_panel(&mut field, &field_layout, &su, ranges.u, "u(x, y)", domain);

    let mut grad = Canvas::new(GRADIENT_WIDTH, HEIGHT);
    for (k, (s, r, title)) in [(&sx, ranges.du_dx, "du/dx"), (&sy, ranges.du_dy, "du/dy")].into_iter().enumerate() {
        let origin = k as u32 * (PANEL + BAR_STRIP);
        let layout = PanelLayout { left: origin + 48, top: 36, size: 360, bar_left: origin + 48 + 360 + 3 };
        draw_panel(&mut grad, &layout, s, r, title, domain);
    }
    Ok(RenderedPair {
        field_png: field.encode()?,
        gradients_png: grad.encode()?,
        resolution: RENDER_N,
        colormap: "viridis",
        ranges,
    })
}

/// Singularities come from the registry entry of the instance's scenario.
pub fn render_instance(inst: &Instance) -> Result<RenderedPair, RenderError> {
    let u = inst.solution_expr()?;
    let (dx, dy) = inst.gradient_exprs()?;
    let singular = match scenario_by_slug(&inst.scenario) {
        Ok(s) => s.singular_points(&inst.params).unwrap_or_default(),
        Err(_) => Vec::new(),
    };
    render_exprs(&u, &dx, &dy, inst.domain, &singular)
}

const GLYPH_ADVANCE: u32 = 6;

fn glyph(c: char) -> [u8; 7] {
    match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ',' => [0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08],
        '/' => [0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        'd' => [0x01, 0x01, 0x0D, 0x13, 0x11, 0x11, 0x0F],
        'e' => [0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E],
        'u' => [0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D],
        'x' => [0x00, 0x00, 0x11, 0x0A, 0x04, 0x0A, 0x11],
        'y' => [0x00, 0x00, 0x11, 0x11, 0x0F, 0x01, 0x0E],
        _ => [0; 7],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn decode(bytes: &[u8]) -> (u32, u32, Vec<u8>) {
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!(info.color_type, png::ColorType::Rgb);
        buf.truncate(info.buffer_size());
        (info.width, info.height, buf)
    }

    fn pixel(img: &(u32, u32, Vec<u8>), x: u32, y: u32) -> [u8; 3] {
        let k = ((y * img.0 + x) * 3) as usize;
        [img.2[k], img.2[k + 1], img.2[k + 2]]
    }

    #[test]
    fn degenerate_range_is_padded() {
        let r = ValueRange::new(1.0, 1.0);
        assert_eq!((r.lo, r.hi), (0.5, 1.5));
        assert_eq!(r.index(1.0), 128);
    }

    #[test]
    fn constant_field_is_one_color() {
        let one = parse("1").unwrap();
        let zero = parse("0").unwrap();
        let d = Domain::from([0.0, 1.0, 0.0, 1.0]);
        let out = render_exprs(&one, &zero, &zero, d, &[]).unwrap();
        let img = decode(&out.field_png);
        assert_eq!((img.0, img.1), (FIELD_WIDTH, HEIGHT));
        let c = pixel(&img, 64, 36);
        for (x, y) in [(100, 100), (463, 435), (300, 200)] {
            assert_eq!(pixel(&img, x, y), c);
        }
        assert_eq!(c, colormap()[128]);
        assert_eq!(out.ranges.u, ValueRange { lo: 0.5, hi: 1.5 });
    }

    #[test]
    fn ramp_increases_left_to_right() {
        let d = Domain::from([-1.0, 1.0, -1.0, 1.0]);
        let u = parse("x").unwrap();
        let out = render_exprs(&u, &parse("1").unwrap(), &parse("0").unwrap(), d, &[]).unwrap();
        let img = decode(&out.field_png);
        let lut = colormap();
        let index_of = |c: [u8; 3]| lut.iter().position(|e| *e == c).unwrap();
        let row: Vec<usize> = (64..464).map(|x| index_of(pixel(&img, x, 200))).collect();
        assert!(row.windows(2).all(|w| w[0] <= w[1]));
        assert!(row[0] < 3 && row[399] > 252);
        let grad = decode(&out.gradients_png);
        assert_eq!((grad.0, grad.1), (GRADIENT_WIDTH, HEIGHT));
        let right = pixel(&grad, PANEL + BAR_STRIP + 48 + 10, 100);
        assert_eq!(right, lut[128]);
    }

    #[test]
    fn bytes_are_stable() {
        let d = Domain::from([-2.0, 2.0, -2.0, 2.0]);
        let u = parse("sin(x)*exp(-y**2)").unwrap();
        let dx = parse("cos(x)*exp(-y**2)").unwrap();
        let dy = parse("-2*y*sin(x)*exp(-y**2)").unwrap();
        let a = render_exprs(&u, &dx, &dy, d, &[]).unwrap();
        let b = render_exprs(&u, &dx, &dy, d, &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_failures() {
        let d = Domain::from([-1.0, 1.0, -1.0, 1.0]);
        let u = parse("log(x)").unwrap();
        assert!(matches!(render_exprs(&u, &u, &u, d, &[]), Err(RenderError::TooManyFailures { .. })));
    }

    #[test]
    fn ticks_span_range() {
        let r = ValueRange::new(-2.0, 6.0);
        assert_eq!(r.ticks(), [-2.0, 0.0, 2.0, 4.0, 6.0]);
        assert_eq!(tick_label(-2.0), "-2.00e0");
    }
}
