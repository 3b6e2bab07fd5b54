//! Procedural part-segmented furniture.
//!
//! Every part is a union of axis-aligned boxes snapped to the voxel lattice of
//! the working resolution, so rasterizing a part at its placed position is
//! exact. The frame's `y` axis points up; the floor sits at `y = FLOOR`.
//!
//! Chair parameter ranges (frame units):
//!
//! | parameter        | range          |
//! |------------------|----------------|
//! | seat width (x)   | 0.42 – 0.62    |
//! | seat depth (z)   | 0.40 – 0.56    |
//! | seat thickness   | 0.09 – 0.14    |
//! | leg height       | 0.30 – 0.40    |
//! | leg thickness    | 0.09 – 0.125   |
//! | back height      | 0.30 – 0.42    |
//! | back thickness   | 0.09 – 0.12    |
//! | arm height       | 0.14 – 0.22    |
//!
//! Tables reuse the fields with top width 0.56 – 0.75, depth 0.45 – 0.70,
//! thickness 0.09 – 0.12 and leg height 0.45 – 0.60.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FLOOR: f64 = -0.48;
const ARM_THICKNESS: f64 = 0.09;
const SLAT_WIDTH: f64 = 0.09;
const RAIL_HEIGHT: f64 = 0.09;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Chair,
    Table,
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chair" => Ok(Category::Chair),
            "table" => Ok(Category::Table),
            other => Err(Error::InvalidSpec(format!("unknown category `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LegStyle {
    Posts,
    Panels,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackStyle {
    Solid,
    Slatted,
    None,
}

/// Semantic part label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartLabel {
    Seat,
    Back,
    Legs,
    Arms,
    Top,
}

impl PartLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            PartLabel::Seat => "seat",
            PartLabel::Back => "back",
            PartLabel::Legs => "legs",
            PartLabel::Arms => "arms",
            PartLabel::Top => "top",
        }
    }
}

impl std::str::FromStr for PartLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "seat" => PartLabel::Seat,
            "back" => PartLabel::Back,
            "legs" => PartLabel::Legs,
            "arms" => PartLabel::Arms,
            "top" => PartLabel::Top,
            other => return Err(Error::InvalidSpec(format!("unknown part label `{other}`"))),
        })
    }
}

/// Parameters of one procedural shape. For tables the `seat_*` fields
/// describe the top and the back/arm fields are unused.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub category: Category,
    pub seed: u64,
    pub seat_width: f64,
    pub seat_depth: f64,
    pub seat_thickness: f64,
    pub leg_style: LegStyle,
    pub leg_height: f64,
    pub leg_thickness: f64,
    pub back_style: BackStyle,
    pub back_height: f64,
    pub back_thickness: f64,
    pub arms: bool,
    pub arm_height: f64,
}

struct Ranges {
    width: (f64, f64),
    depth: (f64, f64),
    thickness: (f64, f64),
    leg_height: (f64, f64),
    leg_thickness: (f64, f64),
    back_height: (f64, f64),
    back_thickness: (f64, f64),
    arm_height: (f64, f64),
}

const CHAIR: Ranges = Ranges {
    width: (0.42, 0.62),
    depth: (0.40, 0.56),
    thickness: (0.09, 0.14),
    leg_height: (0.30, 0.40),
    leg_thickness: (0.09, 0.125),
    back_height: (0.30, 0.42),
    back_thickness: (0.09, 0.12),
    arm_height: (0.14, 0.22),
};

const TABLE: Ranges = Ranges {
    width: (0.56, 0.75),
    depth: (0.45, 0.70),
    thickness: (0.09, 0.12),
    leg_height: (0.45, 0.60),
    leg_thickness: (0.09, 0.125),
    back_height: (0.30, 0.42),
    back_thickness: (0.09, 0.12),
    arm_height: (0.14, 0.22),
};

fn ranges(c: Category) -> &'static Ranges {
    match c {
        Category::Chair => &CHAIR,
        Category::Table => &TABLE,
    }
}

impl ShapeSpec {
    /// Draws every parameter uniformly from its documented range.
    pub fn sample(category: Category, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = ranges(category);
        let mut u = |(lo, hi): (f64, f64)| rng.gen_range(lo..=hi);
        let seat_width = u(r.width);
        let seat_depth = u(r.depth);
        let seat_thickness = u(r.thickness);
        let leg_height = u(r.leg_height);
        let leg_thickness = u(r.leg_thickness);
        let back_height = u(r.back_height);
        let back_thickness = u(r.back_thickness);
        let arm_height = u(r.arm_height);
        let leg_style = if rng.gen_bool(0.5) { LegStyle::Posts } else { LegStyle::Panels };
        let (back_style, arms) = match category {
            Category::Chair => (
                if rng.gen_bool(0.5) { BackStyle::Solid } else { BackStyle::Slatted },
                rng.gen_bool(0.5),
            ),
            Category::Table => (BackStyle::None, false),
        };
        Self {
            category,
            seed,
            seat_width,
            seat_depth,
            seat_thickness,
            leg_style,
            leg_height,
            leg_thickness,
            back_style,
            back_height,
            back_thickness,
            arms,
            arm_height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = ranges(self.category);
        let check = |name: &str, v: f64, (lo, hi): (f64, f64)| {
            if !(v >= lo - 1e-12 && v <= hi + 1e-12) {
                return Err(Error::InvalidSpec(format!("{name} = {v} outside [{lo}, {hi}]")));
            }
            Ok(())
        };
        check("seat_width", self.seat_width, r.width)?;
        check("seat_depth", self.seat_depth, r.depth)?;
        check("seat_thickness", self.seat_thickness, r.thickness)?;
        check("leg_height", self.leg_height, r.leg_height)?;
        check("leg_thickness", self.leg_thickness, r.leg_thickness)?;
        match self.category {
            Category::Chair => {
                check("back_height", self.back_height, r.back_height)?;
                check("back_thickness", self.back_thickness, r.back_thickness)?;
                if self.arms {
                    check("arm_height", self.arm_height, r.arm_height)?;
                }
                if self.back_style == BackStyle::None {
                    return Err(Error::InvalidSpec("chairs need a back".into()));
                }
            }
            Category::Table => {
                if self.arms || self.back_style != BackStyle::None {
                    return Err(Error::InvalidSpec("tables have no back or arms".into()));
                }
            }
        }
        Ok(())
    }

    /// The labeled box lists that make up the shape, in frame coordinates.
    pub fn part_boxes(&self) -> Vec<(PartLabel, Vec<Aabb>)> {
        let (w, d) = (self.seat_width, self.seat_depth);
        let (x0, x1, z0, z1) = (-w / 2.0, w / 2.0, -d / 2.0, d / 2.0);
        let seat_lo = FLOOR + self.leg_height;
        let seat_hi = seat_lo + self.seat_thickness;
        let lt = self.leg_thickness;

        let slab = vec![Aabb::new([x0, seat_lo, z0], [x1, seat_hi, z1])];
        let legs = match self.leg_style {
            LegStyle::Posts => [(x0, z0), (x1 - lt, z0), (x0, z1 - lt), (x1 - lt, z1 - lt)]
                .iter()
                .map(|&(x, z)| Aabb::new([x, FLOOR, z], [x + lt, seat_lo, z + lt]))
                .collect(),
            LegStyle::Panels => vec![
                Aabb::new([x0, FLOOR, z0], [x0 + lt, seat_lo, z1]),
                Aabb::new([x1 - lt, FLOOR, z0], [x1, seat_lo, z1]),
            ],
        };
        if self.category == Category::Table {
            return vec![(PartLabel::Top, slab), (PartLabel::Legs, legs)];
        }

        let bt = self.back_thickness;
        let back_top = seat_hi + self.back_height;
        let back = match self.back_style {
            BackStyle::Slatted => {
                let mut v = vec![Aabb::new([x0, back_top - RAIL_HEIGHT, z0], [x1, back_top, z0 + bt])];
                let mid = -SLAT_WIDTH / 2.0;
                for xs in [x0, mid, x1 - SLAT_WIDTH] {
                    v.push(Aabb::new([xs, seat_hi, z0], [xs + SLAT_WIDTH, back_top, z0 + bt]));
                }
                v
            }
            _ => vec![Aabb::new([x0, seat_hi, z0], [x1, back_top, z0 + bt])],
        };
        let mut parts = vec![(PartLabel::Seat, slab), (PartLabel::Back, back), (PartLabel::Legs, legs)];
        if self.arms {
            let a = ARM_THICKNESS;
            let top = seat_hi + self.arm_height;
            let mut v = Vec::new();
            for xs in [x0, x1 - a] {
                // rest running front to back, plus a front post down to the seat
                v.push(Aabb::new([xs, top - a, z0 + bt], [xs + a, top, z1]));
                v.push(Aabb::new([xs, seat_hi, z1 - a], [xs + a, top - a, z1]));
            }
            parts.push((PartLabel::Arms, v));
        }
        parts
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Aabb {
    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Self {
        Self { lo, hi }
    }

    /// Snaps both corners to voxel boundaries at resolution `r`, keeping at
    /// least one voxel of thickness.
    pub fn snapped(&self, r: usize) -> Self {
        let rf = r as f64;
        let snap = |v: f64| ((v + 0.5) * rf).round().clamp(0.0, rf);
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            let (mut l, mut h) = (snap(self.lo[a]), snap(self.hi[a]));
            if h <= l {
                if l >= rf {
                    l = rf - 1.0;
                }
                h = l + 1.0;
            }
            lo[a] = l / rf - 0.5;
            hi[a] = h / rf - 0.5;
        }
        Self { lo, hi }
    }

    pub fn union_bounds(boxes: &[Aabb]) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for b in boxes {
            for a in 0..3 {
                lo[a] = lo[a].min(b.lo[a]);
                hi[a] = hi[a].max(b.hi[a]);
            }
        }
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_specs_validate() {
        for seed in 0..200 {
            for c in [Category::Chair, Category::Table] {
                ShapeSpec::sample(c, seed).validate().unwrap();
            }
        }
    }

    #[test]
    fn out_of_range_rejected() {
        let mut s = ShapeSpec::sample(Category::Chair, 1);
        s.seat_width = 0.9;
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn shapes_fit_in_frame() {
        for seed in 0..100 {
            let s = ShapeSpec::sample(Category::Chair, seed);
            for (_, boxes) in s.part_boxes() {
                for b in boxes {
                    for a in 0..3 {
                        assert!(b.lo[a] >= -0.5 && b.hi[a] <= 0.5 && b.lo[a] < b.hi[a], "{b:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn snapping_lands_on_voxel_boundaries() {
        let b = Aabb::new([-0.123, 0.01, 0.2], [0.05, 0.011, 0.31]).snapped(32);
        for a in 0..3 {
            for v in [b.lo[a], b.hi[a]] {
                let k = (v + 0.5) * 32.0;
                assert!((k - k.round()).abs() < 1e-9);
            }
            assert!(b.hi[a] > b.lo[a]);
        }
    }
}
