//! Network descriptors: shapes and parameters of the benchmark models.
//!
//! Descriptor files are line-based text:
//!
//! ```text
//! net <name>
//! input <channels> <height> <width>
//! pad_mode <skip|zero>
//! conv      name=<id> oc=N k=K [stride=S] [pad=P] [row=<id>] [norelu] [pool=max:P:S[:ceil[:pad]]]
//! pool      name=<id> pool=max:P:S[:ceil[:pad]]
//! inception name=<id> b1=N b3r=N b3=N b5r=N b5=N pp=N
//! resgroup  name=<id> replicas=R mid=N out=N stride=S [rep=first|inner]
//! avgpool   name=<id> k=P
//! classifier name=<id> oc=N
//! fc        name=<id> oc=N k=K
//! ```
//!
//! `pad_mode` picks how the compiler treats zero padding: `skip` shortens
//! border traces so padded positions are never computed (op counts exclude
//! them), `zero` materializes zero words in the maps buffer and always runs
//! full-length traces (op counts include them). Either way the numerical
//! output is identical.
//!
//! `classifier` marks a post-global-pool 1x1 convolution: it participates
//! in trace-length statistics and functional verification but is excluded
//! from the benchmark performance rows. `fc` marks a classifier with
//! spatial extent (kernel K > 1 on a K x K input); it is report-only.

use crate::error::{Error, Result};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Skip,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn words(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Shape/type/parameters of one convolution.
#[derive(Debug, Clone)]
pub struct ConvSpec {
    pub name: String,
    pub ic: usize,
    pub ih: usize,
    pub iw: usize,
    pub oc: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub relu: bool,
    pub pad_mode: PadMode,
}

impl ConvSpec {
    pub fn oh(&self) -> usize {
        (self.ih + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn ow(&self) -> usize {
        (self.iw + 2 * self.pad - self.kw) / self.stride + 1
    }

    pub fn out_shape(&self) -> Shape {
        Shape {
            c: self.oc,
            h: self.oh(),
            w: self.ow(),
        }
    }

    pub fn in_shape(&self) -> Shape {
        Shape {
            c: self.ic,
            h: self.ih,
            w: self.iw,
        }
    }

    /// Depth-minor trace length of one kernel row.
    pub fn trace_len(&self) -> usize {
        crate::fixpoint::trace_length(self.ic, self.kw)
    }

    /// Weight words: oc kernels of ic*kh*kw plus one bias per output map.
    pub fn weight_words(&self) -> usize {
        self.oc * (self.ic * self.kh * self.kw + 1)
    }

    /// Valid kernel columns for output column `ox` under `Skip` padding.
    pub fn valid_kx(&self, ox: usize) -> (usize, usize) {
        valid_range(ox, self.stride, self.pad, self.kw, self.iw)
    }

    pub fn valid_ky(&self, oy: usize) -> (usize, usize) {
        valid_range(oy, self.stride, self.pad, self.kh, self.ih)
    }

    /// Multiply-accumulates the machine executes for this layer. Under
    /// `Skip` padding, border positions falling on padding are never
    /// computed; under `Zero` the full kernel volume runs everywhere.
    pub fn macs(&self) -> u64 {
        match self.pad_mode {
            PadMode::Zero => {
                (self.oc * self.ic * self.kh * self.kw) as u64 * (self.oh() * self.ow()) as u64
            }
            PadMode::Skip => {
                let sum_vy: u64 = (0..self.oh())
                    .map(|oy| {
                        let (lo, hi) = self.valid_ky(oy);
                        (hi - lo) as u64
                    })
                    .sum();
                let sum_vx: u64 = (0..self.ow())
                    .map(|ox| {
                        let (lo, hi) = self.valid_kx(ox);
                        (hi - lo) as u64
                    })
                    .sum();
                (self.oc * self.ic) as u64 * sum_vy * sum_vx
            }
        }
    }

    /// Operation count at two ops per MAC.
    pub fn ops(&self) -> u64 {
        2 * self.macs()
    }
}

/// Kernel index range `[lo, hi)` that lands inside the input.
fn valid_range(o: usize, stride: usize, pad: usize, k: usize, extent: usize) -> (usize, usize) {
    let base = (o * stride) as isize - pad as isize;
    let lo = (-base).max(0) as usize;
    let hi = k.min(((extent as isize) - base).max(0) as usize);
    (lo, hi.max(lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub p: usize,
    pub stride: usize,
    pub pad: usize,
    /// Caffe-style ceil output arithmetic; overhanging windows clamp.
    pub ceil: bool,
}

impl PoolSpec {
    pub fn out_dim(&self, extent: usize) -> usize {
        let num = extent + 2 * self.pad - self.p;
        if self.ceil {
            num.div_ceil(self.stride) + 1
        } else {
            num / self.stride + 1
        }
    }

    pub fn out_shape(&self, input: Shape) -> Shape {
        Shape {
            c: input.c,
            h: self.out_dim(input.h),
            w: self.out_dim(input.w),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InceptionSpec {
    pub name: String,
    pub input: Shape,
    pub b1: usize,
    pub b3r: usize,
    pub b3: usize,
    pub b5r: usize,
    pub b5: usize,
    pub pp: usize,
}

impl InceptionSpec {
    pub fn out_channels(&self) -> usize {
        self.b1 + self.b3 + self.b5 + self.pp
    }

    pub fn out_shape(&self) -> Shape {
        Shape {
            c: self.out_channels(),
            h: self.input.h,
            w: self.input.w,
        }
    }
}

/// Which bottleneck the group's representative run uses: the first block
/// (reduce from the group input) or an inner block (reduce from the group's
/// own output width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepBlock {
    First,
    Inner,
}

#[derive(Debug, Clone)]
pub struct ResGroupSpec {
    pub name: String,
    pub input: Shape,
    pub replicas: usize,
    pub mid_oc: usize,
    pub expand_oc: usize,
    pub stride: usize,
    pub rep: RepBlock,
}

impl ResGroupSpec {
    pub fn out_shape(&self) -> Shape {
        Shape {
            c: self.expand_oc,
            h: (self.input.h - 1) / self.stride + 1,
            w: (self.input.w - 1) / self.stride + 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AvgPoolSpec {
    pub name: String,
    pub input: Shape,
    pub p: usize,
}

#[derive(Debug, Clone)]
pub enum Item {
    Conv {
        spec: ConvSpec,
        row: String,
        pool: Option<PoolSpec>,
    },
    /// Standalone pool; its cost is attributed to the preceding row.
    Pool {
        name: String,
        input: Shape,
        spec: PoolSpec,
    },
    Inception(InceptionSpec),
    ResGroup(ResGroupSpec),
    AvgPool(AvgPoolSpec),
    /// Post-global-pool 1x1 classifier: verified, not benchmarked.
    Classifier(ConvSpec),
    /// Spatial fully connected layer: bandwidth-report only.
    Fc(ConvSpec),
}

impl Item {
    pub fn name(&self) -> &str {
        match self {
            Item::Conv { spec, .. } => &spec.name,
            Item::Pool { name, .. } => name,
            Item::Inception(i) => &i.name,
            Item::ResGroup(g) => &g.name,
            Item::AvgPool(a) => &a.name,
            Item::Classifier(c) => &c.name,
            Item::Fc(c) => &c.name,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetworkDescriptor {
    pub name: String,
    pub input: Shape,
    pub pad_mode: PadMode,
    pub items: Vec<Item>,
}

fn parse_attrs(rest: &str, line: usize) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for tok in rest.split_whitespace() {
        match tok.split_once('=') {
            Some((k, v)) => {
                map.insert(k.to_string(), v.to_string());
            }
            None => {
                map.insert(tok.to_string(), String::new());
            }
        }
    }
    let _ = line;
    Ok(map)
}

fn attr_usize(map: &HashMap<String, String>, key: &str, line: usize) -> Result<usize> {
    map.get(key)
        .ok_or_else(|| Error::Descriptor(format!("line {line}: missing `{key}`")))?
        .parse()
        .map_err(|_| Error::Descriptor(format!("line {line}: bad `{key}`")))
}

fn attr_usize_or(map: &HashMap<String, String>, key: &str, default: usize, line: usize) -> Result<usize> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::Descriptor(format!("line {line}: bad `{key}`"))),
    }
}

fn parse_pool(text: &str, line: usize) -> Result<PoolSpec> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() < 3 {
        return Err(Error::Descriptor(format!(
            "line {line}: pool spec `{text}` needs kind:P:stride"
        )));
    }
    let kind = match parts[0] {
        "max" => PoolKind::Max,
        "avg" => PoolKind::Avg,
        other => return Err(Error::Descriptor(format!("line {line}: bad pool kind `{other}`"))),
    };
    let p = parts[1]
        .parse()
        .map_err(|_| Error::Descriptor(format!("line {line}: bad pool window")))?;
    let stride = parts[2]
        .parse()
        .map_err(|_| Error::Descriptor(format!("line {line}: bad pool stride")))?;
    let mut ceil = false;
    let mut pad = 0;
    for extra in &parts[3..] {
        if *extra == "ceil" {
            ceil = true;
        } else if let Some(p) = extra.strip_prefix("pad") {
            pad = p
                .parse()
                .map_err(|_| Error::Descriptor(format!("line {line}: bad pool pad")))?;
        } else {
            return Err(Error::Descriptor(format!("line {line}: bad pool flag `{extra}`")));
        }
    }
    Ok(PoolSpec {
        kind,
        p,
        stride,
        pad,
        ceil,
    })
}

impl NetworkDescriptor {
    pub fn parse(text: &str) -> Result<NetworkDescriptor> {
        let mut name = String::new();
        let mut input: Option<Shape> = None;
        let mut pad_mode = PadMode::Skip;
        let mut items: Vec<Item> = Vec::new();
        // Shape flowing into the next item.
        let mut cur: Option<Shape> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (head, rest) = match line.split_once(char::is_whitespace) {
                Some((h, r)) => (h, r.trim()),
                None => (line, ""),
            };
            let attrs = parse_attrs(rest, line_no)?;
            let named = |attrs: &HashMap<String, String>| -> Result<String> {
                attrs
                    .get("name")
                    .cloned()
                    .ok_or_else(|| Error::Descriptor(format!("line {line_no}: missing `name`")))
            };
            match head {
                "net" => name = rest.to_string(),
                "input" => {
                    let dims: Vec<usize> = rest
                        .split_whitespace()
                        .map(|t| t.parse().map_err(|_| Error::Descriptor(format!("line {line_no}: bad input dims"))))
                        .collect::<Result<_>>()?;
                    if dims.len() != 3 {
                        return Err(Error::Descriptor(format!("line {line_no}: input needs c h w")));
                    }
                    let s = Shape {
                        c: dims[0],
                        h: dims[1],
                        w: dims[2],
                    };
                    input = Some(s);
                    cur = Some(s);
                }
                "pad_mode" => {
                    pad_mode = match rest {
                        "skip" => PadMode::Skip,
                        "zero" => PadMode::Zero,
                        other => {
                            return Err(Error::Descriptor(format!("line {line_no}: bad pad_mode `{other}`")))
                        }
                    }
                }
                "conv" | "classifier" | "fc" => {
                    let inp = cur.ok_or_else(|| Error::Descriptor(format!("line {line_no}: no input yet")))?;
                    let item_name = named(&attrs)?;
                    let oc = attr_usize(&attrs, "oc", line_no)?;
                    let k = attr_usize_or(&attrs, "k", 1, line_no)?;
                    let stride = attr_usize_or(&attrs, "stride", 1, line_no)?;
                    let pad = attr_usize_or(&attrs, "pad", 0, line_no)?;
                    let spec = ConvSpec {
                        name: item_name.clone(),
                        ic: inp.c,
                        ih: inp.h,
                        iw: inp.w,
                        oc,
                        kh: k,
                        kw: k,
                        stride,
                        pad,
                        relu: !attrs.contains_key("norelu") && head == "conv",
                        pad_mode,
                    };
                    match head {
                        "conv" => {
                            let mut shape = spec.out_shape();
                            let pool = match attrs.get("pool") {
                                Some(p) => {
                                    let ps = parse_pool(p, line_no)?;
                                    shape = ps.out_shape(shape);
                                    Some(ps)
                                }
                                None => None,
                            };
                            let row = attrs.get("row").cloned().unwrap_or_else(|| item_name.clone());
                            items.push(Item::Conv { spec, row, pool });
                            cur = Some(shape);
                        }
                        "classifier" => {
                            cur = Some(spec.out_shape());
                            items.push(Item::Classifier(spec));
                        }
                        _ => {
                            // Report-only: does not advance the shape.
                            items.push(Item::Fc(spec));
                        }
                    }
                }
                "pool" => {
                    let inp = cur.ok_or_else(|| Error::Descriptor(format!("line {line_no}: no input yet")))?;
                    let spec = parse_pool(
                        attrs
                            .get("pool")
                            .ok_or_else(|| Error::Descriptor(format!("line {line_no}: missing pool spec")))?,
                        line_no,
                    )?;
                    cur = Some(spec.out_shape(inp));
                    items.push(Item::Pool {
                        name: named(&attrs)?,
                        input: inp,
                        spec,
                    });
                }
                "inception" => {
                    let inp = cur.ok_or_else(|| Error::Descriptor(format!("line {line_no}: no input yet")))?;
                    let spec = InceptionSpec {
                        name: named(&attrs)?,
                        input: inp,
                        b1: attr_usize(&attrs, "b1", line_no)?,
                        b3r: attr_usize(&attrs, "b3r", line_no)?,
                        b3: attr_usize(&attrs, "b3", line_no)?,
                        b5r: attr_usize(&attrs, "b5r", line_no)?,
                        b5: attr_usize(&attrs, "b5", line_no)?,
                        pp: attr_usize(&attrs, "pp", line_no)?,
                    };
                    cur = Some(spec.out_shape());
                    items.push(Item::Inception(spec));
                }
                "resgroup" => {
                    let inp = cur.ok_or_else(|| Error::Descriptor(format!("line {line_no}: no input yet")))?;
                    let rep = match attrs.get("rep").map(String::as_str) {
                        None | Some("first") => RepBlock::First,
                        Some("inner") => RepBlock::Inner,
                        Some(other) => {
                            return Err(Error::Descriptor(format!("line {line_no}: bad rep `{other}`")))
                        }
                    };
                    let spec = ResGroupSpec {
                        name: named(&attrs)?,
                        input: inp,
                        replicas: attr_usize(&attrs, "replicas", line_no)?,
                        mid_oc: attr_usize(&attrs, "mid", line_no)?,
                        expand_oc: attr_usize(&attrs, "out", line_no)?,
                        stride: attr_usize_or(&attrs, "stride", 1, line_no)?,
                        rep,
                    };
                    cur = Some(spec.out_shape());
                    items.push(Item::ResGroup(spec));
                }
                "avgpool" => {
                    let inp = cur.ok_or_else(|| Error::Descriptor(format!("line {line_no}: no input yet")))?;
                    let p = attr_usize(&attrs, "k", line_no)?;
                    cur = Some(Shape {
                        c: inp.c,
                        h: inp.h - p + 1,
                        w: inp.w - p + 1,
                    });
                    items.push(Item::AvgPool(AvgPoolSpec {
                        name: named(&attrs)?,
                        input: inp,
                        p,
                    }));
                }
                other => {
                    return Err(Error::Descriptor(format!("line {line_no}: unknown item `{other}`")))
                }
            }
        }

        let input = input.ok_or_else(|| Error::Descriptor("descriptor has no input".into()))?;
        if name.is_empty() {
            return Err(Error::Descriptor("descriptor has no net name".into()));
        }
        Ok(NetworkDescriptor {
            name,
            input,
            pad_mode,
            items,
        })
    }

    /// Every convolution in the graph (inception branches and bottleneck
    /// blocks expanded), for trace statistics and capacity checks.
    /// Classifier 1x1 layers are included; spatial `fc` layers are not.
    pub fn all_convs(&self) -> Vec<ConvSpec> {
        let mut out = Vec::new();
        for item in &self.items {
            match item {
                Item::Conv { spec, .. } => out.push(spec.clone()),
                Item::Classifier(spec) => out.push(spec.clone()),
                Item::Fc(_) | Item::Pool { .. } | Item::AvgPool(_) => {}
                Item::Inception(i) => out.extend(inception_convs(i, self.pad_mode)),
                Item::ResGroup(g) => out.extend(resgroup_convs(g, self.pad_mode)),
            }
        }
        out
    }

    /// Longest and shortest depth-minor trace over the network's layers.
    pub fn trace_extremes(&self) -> (usize, usize) {
        let lens: Vec<usize> = self.all_convs().iter().map(|c| c.trace_len()).collect();
        (
            lens.iter().copied().max().unwrap_or(0),
            lens.iter().copied().min().unwrap_or(0),
        )
    }

    /// Trace extremes for row/column-major kernel-row iteration.
    pub fn naive_trace_extremes(&self) -> (usize, usize) {
        let lens: Vec<usize> = self.all_convs().iter().map(|c| c.kw).collect();
        (
            lens.iter().copied().max().unwrap_or(0),
            lens.iter().copied().min().unwrap_or(0),
        )
    }
}

fn conv(name: String, inp: Shape, oc: usize, k: usize, stride: usize, pad: usize, pad_mode: PadMode) -> ConvSpec {
    ConvSpec {
        name,
        ic: inp.c,
        ih: inp.h,
        iw: inp.w,
        oc,
        kh: k,
        kw: k,
        stride,
        pad,
        relu: true,
        pad_mode,
    }
}

/// The six convolutions of an inception module in execution order.
pub fn inception_convs(spec: &InceptionSpec, pad_mode: PadMode) -> Vec<ConvSpec> {
    let s = spec.input;
    let n = &spec.name;
    vec![
        conv(format!("{n}.b1"), s, spec.b1, 1, 1, 0, pad_mode),
        conv(format!("{n}.b3r"), s, spec.b3r, 1, 1, 0, pad_mode),
        conv(
            format!("{n}.b3"),
            Shape { c: spec.b3r, ..s },
            spec.b3,
            3,
            1,
            1,
            pad_mode,
        ),
        conv(format!("{n}.b5r"), s, spec.b5r, 1, 1, 0, pad_mode),
        conv(
            format!("{n}.b5"),
            Shape { c: spec.b5r, ..s },
            spec.b5,
            5,
            1,
            2,
            pad_mode,
        ),
        conv(format!("{n}.pp"), s, spec.pp, 1, 1, 0, pad_mode),
    ]
}

/// Convolutions of the representative bottleneck plus the projection.
/// Order: reduce, mid, expand, projection.
pub fn resgroup_convs(g: &ResGroupSpec, pad_mode: PadMode) -> Vec<ConvSpec> {
    let out = g.out_shape();
    let n = &g.name;
    let (red_ic, red_stride, red_in) = match g.rep {
        // First block: reduce from the group input at the group stride.
        RepBlock::First => (g.input.c, g.stride, g.input),
        // Inner block: reduce from the group's own width at stride 1.
        RepBlock::Inner => (out.c, 1, out),
    };
    let mut v = vec![
        conv(
            format!("{n}.reduce"),
            Shape { c: red_ic, ..red_in },
            g.mid_oc,
            1,
            red_stride,
            0,
            pad_mode,
        ),
        conv(
            format!("{n}.mid"),
            Shape { c: g.mid_oc, ..out },
            g.mid_oc,
            3,
            1,
            1,
            pad_mode,
        ),
        conv(
            format!("{n}.expand"),
            Shape { c: g.mid_oc, ..out },
            g.expand_oc,
            1,
            1,
            0,
            pad_mode,
        ),
        conv(
            format!("{n}.proj"),
            g.input,
            g.expand_oc,
            1,
            g.stride,
            0,
            pad_mode,
        ),
    ];
    // The expand output feeds the residual addition; ReLU lands after it.
    v[2].relu = true;
    v[3].relu = false;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_arithmetic() {
        let c = ConvSpec {
            name: "t".into(),
            ic: 3,
            ih: 224,
            iw: 224,
            oc: 64,
            kh: 11,
            kw: 11,
            stride: 4,
            pad: 2,
            relu: true,
            pad_mode: PadMode::Skip,
        };
        assert_eq!(c.oh(), 55);
        assert_eq!(c.ow(), 55);
        assert_eq!(c.trace_len(), 33);
        // Padding-excluded op count reproduces the published 139 M-ops.
        assert_eq!((c.ops() as f64 / 1e6).round() as u64, 139);
    }

    #[test]
    fn valid_range_borders() {
        // 3x3 pad 1 stride 1 on 13: first and last columns see 2 taps.
        let c = ConvSpec {
            name: "t".into(),
            ic: 1,
            ih: 13,
            iw: 13,
            oc: 1,
            kh: 3,
            kw: 3,
            stride: 1,
            pad: 1,
            relu: false,
            pad_mode: PadMode::Skip,
        };
        assert_eq!(c.valid_kx(0), (1, 3));
        assert_eq!(c.valid_kx(6), (0, 3));
        assert_eq!(c.valid_kx(12), (0, 2));
    }

    #[test]
    fn pool_ceil_and_floor() {
        let floor = PoolSpec {
            kind: PoolKind::Max,
            p: 3,
            stride: 2,
            pad: 0,
            ceil: false,
        };
        let ceil = PoolSpec { ceil: true, ..floor.clone() };
        assert_eq!(floor.out_dim(55), 27);
        assert_eq!(ceil.out_dim(112), 56);
        assert_eq!(ceil.out_dim(56), 28);
        // Downsampling factor: stride 2 roughly quarters the pixels.
        let out = floor.out_shape(Shape { c: 8, h: 55, w: 55 });
        assert_eq!((out.h, out.w), (27, 27));
    }

    #[test]
    fn parse_minimal_net() {
        let net = NetworkDescriptor::parse(
            "net tiny\ninput 3 8 8\npad_mode zero\nconv name=c1 oc=16 k=3 pad=1 pool=max:2:2\n",
        )
        .unwrap();
        assert_eq!(net.name, "tiny");
        assert_eq!(net.items.len(), 1);
        match &net.items[0] {
            Item::Conv { spec, pool, .. } => {
                assert_eq!(spec.oc, 16);
                assert_eq!(spec.pad_mode, PadMode::Zero);
                assert!(pool.is_some());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inception_shapes() {
        let spec = InceptionSpec {
            name: "3a".into(),
            input: Shape { c: 192, h: 28, w: 28 },
            b1: 64,
            b3r: 96,
            b3: 128,
            b5r: 16,
            b5: 32,
            pp: 32,
        };
        assert_eq!(spec.out_channels(), 256);
        let convs = inception_convs(&spec, PadMode::Zero);
        assert_eq!(convs.len(), 6);
        assert_eq!(convs[2].ic, 96);
        assert_eq!(convs[4].kh, 5);
    }
}
