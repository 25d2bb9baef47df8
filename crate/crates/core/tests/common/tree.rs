//! Hand-enumerated QP for a two-branch, depth-two tree.

use mixture_smpc::bmpc::{BmpcConfig, BmpcParams};
use mixture_smpc::setops::PolytopeH;
use nalgebra::{DMatrix, DVector};

use super::{m1, v1};

pub const A: f64 = 1.2;
pub const B: f64 = 0.7;
pub const MU: [f64; 2] = [-0.4, 0.9];
pub const PI: [f64; 2] = [0.3, 0.7];
pub const Q: f64 = 2.0;
pub const R: f64 = 3.0;
pub const P: f64 = 5.0;

pub fn config() -> BmpcConfig {
    BmpcConfig::new(BmpcParams {
        a: m1(A),
        b: m1(B),
        k: m1(-1.0),
        z: PolytopeH::interval(-2.0, 2.5),
        v: PolytopeH::interval(-1.0, 1.5),
        z_f: PolytopeH::interval(-0.5, 0.75),
        atoms: vec![v1(MU[0]), v1(MU[1])],
        weights: PI.to_vec(),
        horizon: 2,
        q: m1(Q),
        r: m1(R),
        p: m1(P),
        epsilon: 1e3,
    })
    .unwrap()
}

// Columns: z0 z1 z2 z3 z4 z5 z6 v0 v1 v2.
// Tree: z0 -> (z1, z2) via v0; z1 -> (z3, z4) via v1; z2 -> (z5, z6) via v2.

pub fn oracle_h() -> DMatrix<f64> {
    let path = [
        1.0,
        1.0 * PI[0],
        1.0 * PI[1],
        1.0 * PI[0] * PI[0],
        1.0 * PI[0] * PI[1],
        1.0 * PI[1] * PI[0],
        1.0 * PI[1] * PI[1],
    ];
    let mut h = DMatrix::zeros(10, 10);
    h[(0, 0)] = 2.0 * path[0] * Q;
    h[(1, 1)] = 2.0 * path[1] * Q;
    h[(2, 2)] = 2.0 * path[2] * Q;
    h[(3, 3)] = 2.0 * path[3] * P;
    h[(4, 4)] = 2.0 * path[4] * P;
    h[(5, 5)] = 2.0 * path[5] * P;
    h[(6, 6)] = 2.0 * path[6] * P;
    h[(7, 7)] = 2.0 * path[0] * R;
    h[(8, 8)] = 2.0 * path[1] * R;
    h[(9, 9)] = 2.0 * path[2] * R;
    h
}

pub fn oracle_eq(root: f64) -> (DMatrix<f64>, DVector<f64>) {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(7, 10, &[
    //  z0    z1    z2    z3   z4   z5   z6   v0    v1    v2
        1.0,  0.0,  0.0,  0.0, 0.0, 0.0, 0.0, 0.0,  0.0,  0.0,
        -A,   1.0,  0.0,  0.0, 0.0, 0.0, 0.0, -B,   0.0,  0.0,
        -A,   0.0,  1.0,  0.0, 0.0, 0.0, 0.0, -B,   0.0,  0.0,
        0.0,  -A,   0.0,  1.0, 0.0, 0.0, 0.0, 0.0,  -B,   0.0,
        0.0,  -A,   0.0,  0.0, 1.0, 0.0, 0.0, 0.0,  -B,   0.0,
        0.0,  0.0,  -A,   0.0, 0.0, 1.0, 0.0, 0.0,  0.0,  -B,
        0.0,  0.0,  -A,   0.0, 0.0, 0.0, 1.0, 0.0,  0.0,  -B,
    ]);
    let b = DVector::from_vec(vec![root, MU[0], MU[1], MU[0], MU[1], MU[0], MU[1]]);
    (a, b)
}

pub fn oracle_in() -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(20, 10);
    let mut b = DVector::zeros(20);
    let mut row = 0;
    let mut bound = |col: usize, lo: f64, hi: f64| {
        a[(row, col)] = 1.0;
        b[row] = hi;
        a[(row + 1, col)] = -1.0;
        b[row + 1] = -lo;
        row += 2;
    };
    for z in 0..3 {
        bound(z, -2.0, 2.5);
    }
    for v in 7..10 {
        bound(v, -1.0, 1.5);
    }
    for leaf in 3..7 {
        bound(leaf, -0.5, 0.75);
    }
    (a, b)
}
