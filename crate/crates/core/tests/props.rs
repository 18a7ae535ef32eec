//! Property tests for the grid/kernel/serialization invariants.

use proptest::prelude::*;

use mfginv_core::fields::{quotient_of_offset, quotient_shifts, InteractionKernel};
use mfginv_core::grid::{divergence, space_diff, CellField, FaceField, GridSpec, TimeLayout};
use mfginv_core::io::{read_cell_field, read_face_field, write_cell_field, write_face_field};

fn grid_strategy() -> impl Strategy<Value = GridSpec> {
    (1usize..=2, 2usize..=9, 2usize..=6, 0.5f64..4.0)
        .prop_map(|(dim, m, n, t)| GridSpec::new(dim, m, n, t).unwrap())
}

proptest! {
    #[test]
    fn wrap_reduces_and_is_idempotent(
        spec in grid_strategy(),
        i1 in -100i64..100,
        i2 in -100i64..100,
    ) {
        let idx: Vec<i64> = if spec.dim == 1 { vec![i1] } else { vec![i1, i2] };
        let flat = spec.wrap(&idx);
        prop_assert!(flat < spec.cells());
        let c = spec.coords(flat);
        let again = if spec.dim == 1 {
            spec.wrap(&[c[0] as i64])
        } else {
            spec.wrap(&[c[0] as i64, c[1] as i64])
        };
        prop_assert_eq!(flat, again);
        // componentwise modulo
        let m = spec.m as i64;
        prop_assert_eq!(c[0] as i64, i1.rem_euclid(m));
        if spec.dim == 2 {
            prop_assert_eq!(c[1] as i64, i2.rem_euclid(m));
        }
    }

    #[test]
    fn divergence_sums_to_zero(
        spec in grid_strategy(),
        seed in 0u64..1000,
    ) {
        let mut x = seed as f64 * 0.618 + 0.1;
        let field = FaceField::from_fn(spec, |_, _, _| {
            x = (x * 997.0 + 0.1234).fract();
            x - 0.5
        });
        for t in 0..spec.n {
            let d = divergence(&field, t).unwrap();
            let total: f64 = d.iter().sum();
            let scale = d.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
            prop_assert!(total.abs() <= 1e-12 * scale * spec.cells() as f64);
        }
    }

    #[test]
    fn space_diff_telescopes(
        spec in grid_strategy(),
        seed in 0u64..1000,
    ) {
        let mut x = seed as f64 * 0.37 + 0.05;
        let f = CellField::from_fn(spec, TimeLayout::Static, |_, _| {
            x = (x * 773.0 + 0.71).fract();
            x
        });
        for axis in 0..spec.dim {
            let d = space_diff(&f, axis, 0).unwrap();
            for line in 0..spec.lines() {
                let mut total = 0.0;
                for cell in 0..spec.cells() {
                    if spec.line_of(cell, axis) == line {
                        total += d[cell];
                    }
                }
                prop_assert!(total.abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn expanded_kernel_is_exactly_symmetric_and_invariant(
        spec in grid_strategy(),
        seed in 0u64..1000,
    ) {
        let mut x = seed as f64 * 0.511 + 0.2;
        let vals: Vec<f64> = (0..InteractionKernel::qcells_for(&spec)).map(|_| {
            x = (x * 913.0 + 0.331).fract();
            x - 0.5
        }).collect();
        let ek = InteractionKernel::from_values(spec, vals).unwrap().expand();
        for i in 0..spec.cells() {
            for j in 0..spec.cells() {
                prop_assert_eq!(ek.at(i, j).to_bits(), ek.at(j, i).to_bits());
            }
        }
        // the shift table partitions all offsets
        let shifts = quotient_shifts(&spec);
        let mut count = 0usize;
        for (q, list) in shifts.iter().enumerate() {
            for &s in list {
                prop_assert_eq!(quotient_of_offset(&spec, s), q);
                count += 1;
            }
        }
        prop_assert_eq!(count, spec.cells());
    }

    #[test]
    fn field_serialization_roundtrips_bit_exactly(
        spec in grid_strategy(),
        values in prop::collection::vec(
            prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
            400,
        ),
    ) {
        let dir = std::env::temp_dir().join(format!(
            "mfginv-prop-{}-{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        let mut it = values.into_iter().cycle();
        for layout in [TimeLayout::HalfStep, TimeLayout::IntStep, TimeLayout::Static] {
            let field = CellField::from_fn(spec, layout, |_, _| it.next().unwrap());
            let path = dir.join(format!("cell-{}.csv", layout.name()));
            write_cell_field(&path, &field).unwrap();
            let back = read_cell_field(&path, &spec).unwrap();
            for (a, b) in field.values().iter().zip(back.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        let face = FaceField::from_fn(spec, |_, _, _| it.next().unwrap());
        let path = dir.join("face.csv");
        write_face_field(&path, &face).unwrap();
        let back = read_face_field(&path, &spec).unwrap();
        for (a, b) in face.values().iter().zip(back.values()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        let _ = std::fs::remove_dir_all(&dir);
    }
}
