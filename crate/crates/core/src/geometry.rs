//! Planar geometry: points, segments, polylines and segment crossings.

use std::cmp::Ordering;
use std::ops::{Add, Mul, Neg, Sub};

use serde::de::{Deserialize, Deserializer};
use serde::ser::{Serialize, Serializer};

use crate::scalar::Scalar;

/// A point (or vector) in the plane, in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point2<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn distance(self, o: Self) -> T {
        (self - o).norm()
    }

    #[inline]
    pub fn distance_sq(self, o: Self) -> T {
        let d = self - o;
        d.dot(d)
    }

    /// Unit vector pointing along `heading` (radians, counter-clockwise from +x).
    #[inline]
    pub fn from_heading(heading: T) -> Self {
        Self::new(heading.cos(), heading.sin())
    }

    #[inline]
    pub fn heading(self) -> T {
        self.y.atan2(self.x)
    }

    /// Rotates counter-clockwise about the origin.
    pub fn rotated(self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(self.x * c - self.y * s, self.x * s + self.y * c)
    }

    #[inline]
    pub fn lerp(self, o: Self, t: T) -> Self {
        self + (o - self) * t
    }

    /// Lexicographic total order on (x, y); NaN sorts last.
    pub fn lex_cmp(&self, o: &Self) -> Ordering {
        self.x
            .partial_cmp(&o.x)
            .unwrap_or(Ordering::Equal)
            .then(self.y.partial_cmp(&o.y).unwrap_or(Ordering::Equal))
    }
}

impl<T: Scalar> Add for Point2<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Scalar> Sub for Point2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Scalar> Mul<T> for Point2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, k: T) -> Self {
        Self::new(self.x * k, self.y * k)
    }
}

impl<T: Scalar> Neg for Point2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

// Points are written as `[x, y]`.
impl<T: Serialize> Serialize for Point2<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (&self.x, &self.y).serialize(s)
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Point2<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (x, y) = <(T, T)>::deserialize(d)?;
        Ok(Point2 { x, y })
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle<T: Scalar>(a: T) -> T {
    let two_pi = T::TAU();
    let mut r = a % two_pi;
    if r > T::PI() {
        r -= two_pi;
    } else if r <= -T::PI() {
        r += two_pi;
    }
    r
}

/// Absolute difference between two headings, in `[0, pi]`.
pub fn heading_diff<T: Scalar>(a: T, b: T) -> T {
    wrap_angle(a - b).abs()
}

/// Closed segment between two points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment<T> {
    pub a: Point2<T>,
    pub b: Point2<T>,
}

impl<T: Scalar> Segment<T> {
    #[inline]
    pub fn new(a: Point2<T>, b: Point2<T>) -> Self {
        Self { a, b }
    }

    #[inline]
    pub fn length(&self) -> T {
        self.a.distance(self.b)
    }

    #[inline]
    pub fn midpoint(&self) -> Point2<T> {
        self.a.lerp(self.b, T::lit(0.5))
    }

    pub fn heading(&self) -> T {
        (self.b - self.a).heading()
    }

    /// Closest point parameter in `[0, 1]` and the distance to `p`.
    pub fn project(&self, p: Point2<T>) -> (T, T) {
        let d = self.b - self.a;
        let len2 = d.dot(d);
        let t = if len2 > T::zero() {
            ((p - self.a).dot(d) / len2).max(T::zero()).min(T::one())
        } else {
            T::zero()
        };
        (t, self.a.lerp(self.b, t).distance(p))
    }

    fn canonical(&self) -> (Point2<T>, Point2<T>) {
        if self.a.lex_cmp(&self.b) == Ordering::Greater {
            (self.b, self.a)
        } else {
            (self.a, self.b)
        }
    }
}

/// Proper crossing point of two segments.
///
/// Returns `None` for disjoint, parallel, touching (an endpoint lying on the
/// other segment) and collinear-overlapping segments. The result does not
/// depend on the argument order or on segment orientation.
pub fn segment_intersection<T: Scalar>(a: &Segment<T>, b: &Segment<T>) -> Option<Point2<T>> {
    let (a0, a1) = a.canonical();
    let (b0, b1) = b.canonical();
    // Evaluate in a canonical order so that swapping the arguments is exact.
    let ((p0, p1), (q0, q1)) = match a0.lex_cmp(&b0).then(a1.lex_cmp(&b1)) {
        Ordering::Greater => ((b0, b1), (a0, a1)),
        _ => ((a0, a1), (b0, b1)),
    };
    let r = p1 - p0;
    let s = q1 - q0;
    let o1 = r.cross(q0 - p0);
    let o2 = r.cross(q1 - p0);
    let o3 = s.cross(p0 - q0);
    let o4 = s.cross(p1 - q0);
    let zero = T::zero();
    let straddles_p = (o1 > zero && o2 < zero) || (o1 < zero && o2 > zero);
    let straddles_q = (o3 > zero && o4 < zero) || (o3 < zero && o4 > zero);
    if !(straddles_p && straddles_q) {
        return None;
    }
    let denom = r.cross(s);
    if denom == zero {
        return None;
    }
    let t = (q0 - p0).cross(s) / denom;
    Some(p0 + r * t)
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug)]
pub struct Aabb<T> {
    pub min: Point2<T>,
    pub max: Point2<T>,
}

impl<T: Scalar> Aabb<T> {
    pub fn of_points(pts: &[Point2<T>]) -> Self {
        let mut min = Point2::new(T::infinity(), T::infinity());
        let mut max = Point2::new(T::neg_infinity(), T::neg_infinity());
        for p in pts {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Self { min, max }
    }

    #[inline]
    pub fn overlaps(&self, o: &Self) -> bool {
        self.min.x <= o.max.x && o.min.x <= self.max.x && self.min.y <= o.max.y && o.min.y <= self.max.y
    }

    pub fn inflate(&self, r: T) -> Self {
        Self {
            min: Point2::new(self.min.x - r, self.min.y - r),
            max: Point2::new(self.max.x + r, self.max.y + r),
        }
    }
}

const CHUNK: usize = 16;

/// Bounding boxes over runs of `CHUNK` consecutive segments of a polyline.
struct ChunkIndex<T> {
    boxes: Vec<(usize, usize, Aabb<T>)>,
}

impl<T: Scalar> ChunkIndex<T> {
    fn new(pts: &[Point2<T>]) -> Self {
        let nseg = pts.len().saturating_sub(1);
        let mut boxes = Vec::with_capacity(nseg / CHUNK + 1);
        let mut start = 0;
        while start < nseg {
            let end = (start + CHUNK).min(nseg);
            boxes.push((start, end, Aabb::of_points(&pts[start..=end])));
            start = end;
        }
        Self { boxes }
    }
}

/// A proper crossing between segment `ia` of one polyline and segment `ib`
/// of another.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing<T> {
    pub ia: usize,
    pub ib: usize,
    pub point: Point2<T>,
}

/// All proper crossings between the segments of two polylines, sorted by
/// `(ia, ib)`. Uses chunked bounding boxes; the result is identical to the
/// exhaustive all-pairs scan.
pub fn polyline_crossings<T: Scalar>(a: &[Point2<T>], b: &[Point2<T>]) -> Vec<Crossing<T>> {
    let mut out = Vec::new();
    if a.len() < 2 || b.len() < 2 {
        return out;
    }
    let ca = ChunkIndex::new(a);
    let cb = ChunkIndex::new(b);
    for &(sa, ea, ba) in &ca.boxes {
        for &(sb, eb, bb) in &cb.boxes {
            if !ba.overlaps(&bb) {
                continue;
            }
            for ia in sa..ea {
                let s1 = Segment::new(a[ia], a[ia + 1]);
                for ib in sb..eb {
                    let s2 = Segment::new(b[ib], b[ib + 1]);
                    if let Some(point) = segment_intersection(&s1, &s2) {
                        out.push(Crossing { ia, ib, point });
                    }
                }
            }
        }
    }
    out.sort_by_key(|c| (c.ia, c.ib));
    out
}

/// Pairs of vertex indices `(i, j)` with `|a[i] - b[j]| <= radius`, sorted.
pub fn points_within<T: Scalar>(a: &[Point2<T>], b: &[Point2<T>], radius: T) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if a.is_empty() || b.is_empty() {
        return out;
    }
    let r2 = radius * radius;
    let chunks = |pts: &[Point2<T>]| -> Vec<(usize, usize, Aabb<T>)> {
        (0..pts.len())
            .step_by(CHUNK)
            .map(|s| {
                let e = (s + CHUNK).min(pts.len());
                (s, e, Aabb::of_points(&pts[s..e]).inflate(radius))
            })
            .collect()
    };
    let ca = chunks(a);
    let cb = chunks(b);
    for &(sa, ea, ba) in &ca {
        for &(sb, eb, bb) in &cb {
            if !ba.overlaps(&bb) {
                continue;
            }
            for (i, pa) in a.iter().enumerate().take(ea).skip(sa) {
                for (j, pb) in b.iter().enumerate().take(eb).skip(sb) {
                    if pa.distance_sq(*pb) <= r2 {
                        out.push((i, j));
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Cumulative arc length at each vertex.
pub fn cumulative_lengths<T: Scalar>(pts: &[Point2<T>]) -> Vec<T> {
    let mut acc = T::zero();
    let mut out = Vec::with_capacity(pts.len());
    for (i, p) in pts.iter().enumerate() {
        if i > 0 {
            acc += pts[i - 1].distance(*p);
        }
        out.push(acc);
    }
    out
}

pub fn polyline_length<T: Scalar>(pts: &[Point2<T>]) -> T {
    pts.windows(2).fold(T::zero(), |acc, w| acc + w[0].distance(w[1]))
}

/// Closest point on a polyline.
#[derive(Clone, Copy, Debug)]
pub struct Projection<T> {
    /// Index of the segment holding the closest point.
    pub segment: usize,
    /// Arc length from the first vertex.
    pub arc: T,
    pub distance: T,
    pub point: Point2<T>,
    /// Direction of travel at the closest point.
    pub heading: T,
}

/// Projects `p` onto a polyline with precomputed cumulative lengths.
/// Ties are resolved toward the earliest segment.
pub fn project_onto<T: Scalar>(pts: &[Point2<T>], cum: &[T], p: Point2<T>) -> Option<Projection<T>> {
    if pts.is_empty() {
        return None;
    }
    if pts.len() == 1 {
        return Some(Projection {
            segment: 0,
            arc: T::zero(),
            distance: pts[0].distance(p),
            point: pts[0],
            heading: T::zero(),
        });
    }
    let mut best: Option<Projection<T>> = None;
    for i in 0..pts.len() - 1 {
        let seg = Segment::new(pts[i], pts[i + 1]);
        let (t, d) = seg.project(p);
        if best.as_ref().is_none_or(|b| d < b.distance) {
            best = Some(Projection {
                segment: i,
                arc: cum[i] + seg.length() * t,
                distance: d,
                point: seg.a.lerp(seg.b, t),
                heading: seg.heading(),
            });
        }
    }
    best
}

/// Point and heading at arc length `s` (clamped to the polyline).
pub fn sample_at<T: Scalar>(pts: &[Point2<T>], cum: &[T], s: T) -> (Point2<T>, T) {
    debug_assert!(!pts.is_empty());
    if pts.len() == 1 {
        return (pts[0], T::zero());
    }
    let last = pts.len() - 1;
    let s = s.max(T::zero()).min(cum[last]);
    // Index of the segment containing s.
    let i = match cum.binary_search_by(|c| c.partial_cmp(&s).unwrap_or(Ordering::Less)) {
        Ok(i) => i.min(last - 1),
        Err(i) => i.saturating_sub(1).min(last - 1),
    };
    let seg_len = cum[i + 1] - cum[i];
    let t = if seg_len > T::zero() { (s - cum[i]) / seg_len } else { T::zero() };
    (pts[i].lerp(pts[i + 1], t), (pts[i + 1] - pts[i]).heading())
}

/// Resamples a polyline at uniform arc spacing. The first and last vertices
/// are preserved; the final interval may be shorter than `spacing`.
pub fn resample<T: Scalar>(pts: &[Point2<T>], spacing: T) -> Vec<Point2<T>> {
    if pts.len() < 2 {
        return pts.to_vec();
    }
    let cum = cumulative_lengths(pts);
    let total = cum[cum.len() - 1];
    if total <= T::zero() {
        return vec![pts[0]];
    }
    let n = (total / spacing).floor().to_usize().unwrap_or(0);
    let mut out = Vec::with_capacity(n + 2);
    for k in 0..=n {
        let s = spacing * T::from_usize(k).unwrap();
        out.push(sample_at(pts, &cum, s).0);
    }
    let end = pts[pts.len() - 1];
    let gap = out.last().map(|p| p.distance(end)).unwrap_or(T::infinity());
    if gap > spacing * T::lit(1e-6) {
        out.push(end);
    } else if let Some(last) = out.last_mut() {
        *last = end;
    }
    out
}

/// Samples a circular arc from `a0` to `a1` (radians) with roughly `step`
/// meters between samples, endpoints included.
pub fn arc_points<T: Scalar>(center: Point2<T>, radius: T, a0: T, a1: T, step: T) -> Vec<Point2<T>> {
    let len = (a1 - a0).abs() * radius;
    let n = (len / step).ceil().to_usize().unwrap_or(1).max(1);
    (0..=n)
        .map(|k| {
            let a = a0 + (a1 - a0) * T::from_usize(k).unwrap() / T::from_usize(n).unwrap();
            center + Point2::new(a.cos(), a.sin()) * radius
        })
        .collect()
}

/// Samples a quadratic Bezier curve, endpoints included.
pub fn bezier_points<T: Scalar>(p0: Point2<T>, c: Point2<T>, p2: Point2<T>, n: usize) -> Vec<Point2<T>> {
    let n = n.max(1);
    (0..=n)
        .map(|k| {
            let t = T::from_usize(k).unwrap() / T::from_usize(n).unwrap();
            let u = T::one() - t;
            p0 * (u * u) + c * (T::lit(2.0) * u * t) + p2 * (t * t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    type P = Point2<f64>;

    fn seg(a: (f64, f64), b: (f64, f64)) -> Segment<f64> {
        Segment::new(P::new(a.0, a.1), P::new(b.0, b.1))
    }

    #[test]
    fn symmetric_cross() {
        let p = segment_intersection(&seg((0., 0.), (2., 2.)), &seg((0., 2.), (2., 0.))).unwrap();
        assert!((p.x - 1.0).abs() < 1e-12 && (p.y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_and_collinear_are_absent() {
        assert!(segment_intersection(&seg((0., 0.), (1., 0.)), &seg((0., 1.), (1., 1.))).is_none());
        assert!(segment_intersection(&seg((0., 0.), (2., 0.)), &seg((1., 0.), (3., 0.))).is_none());
    }

    #[test]
    fn touching_endpoint_is_not_a_crossing() {
        assert!(segment_intersection(&seg((0., 0.), (1., 0.)), &seg((1., 0.), (1., 1.))).is_none());
        assert!(segment_intersection(&seg((0., 0.), (2., 0.)), &seg((1., 0.), (1., 1.))).is_none());
    }

    #[test]
    fn works_in_single_precision() {
        let a = Segment::new(Point2::<f32>::new(0., 0.), Point2::new(2., 2.));
        let b = Segment::new(Point2::<f32>::new(0., 2.), Point2::new(2., 0.));
        let p = segment_intersection(&a, &b).unwrap();
        assert!((p.x - 1.0).abs() < 1e-6);
    }

    #[test]
    fn resample_keeps_endpoints() {
        let pts = vec![P::new(0., 0.), P::new(3.5, 0.), P::new(3.5, 2.0)];
        let r = resample(&pts, 1.0);
        assert_eq!(r.first(), pts.first());
        assert_eq!(r.last(), pts.last());
        // The corner is cut by one chord.
        let cut = 1.0 - 0.5f64.hypot(0.5);
        assert!((polyline_length(&r) - (5.5 - cut)).abs() < 1e-9);
        for w in r.windows(2) {
            assert!(w[0].distance(w[1]) <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::{PI, TAU};
        for k in -20..20 {
            let a = k as f64 * 0.7;
            let w = wrap_angle(a);
            assert!(w > -PI - 1e-12 && w <= PI + 1e-12);
            let turns = (a - w) / TAU;
            assert!((turns - turns.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_arc() {
        let pts = vec![P::new(0., 0.), P::new(10., 0.), P::new(10., 10.)];
        let cum = cumulative_lengths(&pts);
        let pr = project_onto(&pts, &cum, P::new(10.5, 4.0)).unwrap();
        assert_eq!(pr.segment, 1);
        assert!((pr.arc - 14.0).abs() < 1e-12);
        assert!((pr.distance - 0.5).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pt() -> impl Strategy<Value = P> {
            (-50.0f64..50.0, -50.0f64..50.0).prop_map(|(x, y)| P::new(x, y))
        }

        proptest! {
            #[test]
            fn intersection_is_symmetric(a0 in pt(), a1 in pt(), b0 in pt(), b1 in pt()) {
                let a = Segment::new(a0, a1);
                let b = Segment::new(b0, b1);
                prop_assert_eq!(segment_intersection(&a, &b), segment_intersection(&b, &a));
                let ar = Segment::new(a1, a0);
                prop_assert_eq!(segment_intersection(&a, &b), segment_intersection(&ar, &b));
            }

            #[test]
            fn pruned_crossings_match_exhaustive(
                a in proptest::collection::vec(pt(), 2..60),
                b in proptest::collection::vec(pt(), 2..60),
            ) {
                let mut brute = Vec::new();
                for i in 0..a.len() - 1 {
                    for j in 0..b.len() - 1 {
                        if let Some(p) = segment_intersection(&Segment::new(a[i], a[i + 1]), &Segment::new(b[j], b[j + 1])) {
                            brute.push(Crossing { ia: i, ib: j, point: p });
                        }
                    }
                }
                prop_assert_eq!(polyline_crossings(&a, &b), brute);
            }
        }
    }
}
