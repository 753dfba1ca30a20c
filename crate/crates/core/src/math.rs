//! Fixed-size vector and matrix helpers; matrices are row-major `[[f32; 3]; 3]`.

pub type Vec3 = [f32; 3];
pub type Mat3 = [[f32; 3]; 3];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f32) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f32 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f32 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

/// `mᵀ v`.
pub fn mat_t_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_mat(q: [f32; 4]) -> Mat3 {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn quat_normalize(q: [f32; 4]) -> [f32; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Pulls `dL/dR` back to `dL/dq` for the unit quaternion `q`.
pub fn quat_to_mat_backward(q: [f32; 4], dr: &Mat3) -> [f32; 4] {
    let [w, x, y, z] = q;
    let dw = [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]];
    let dx = [[0.0, y, z], [y, -2.0 * x, -w], [z, w, -2.0 * x]];
    let dy = [[-2.0 * y, x, w], [x, 0.0, z], [-w, z, -2.0 * y]];
    let dz = [[-2.0 * z, -w, x], [w, -2.0 * z, y], [x, y, 0.0]];
    let contract = |m: [[f32; 3]; 3]| -> f32 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += m[i][j] * dr[i][j];
            }
        }
        2.0 * s
    };
    [contract(dw), contract(dx), contract(dy), contract(dz)]
}

/// Pulls a gradient on `q / |q|` back to the raw quaternion.
pub fn quat_normalize_backward(raw: [f32; 4], d_unit: [f32; 4]) -> [f32; 4] {
    let n = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2] + raw[3] * raw[3]).sqrt();
    let u = [raw[0] / n, raw[1] / n, raw[2] / n, raw[3] / n];
    let proj = u[0] * d_unit[0] + u[1] * d_unit[1] + u[2] * d_unit[2] + u[3] * d_unit[3];
    [
        (d_unit[0] - u[0] * proj) / n,
        (d_unit[1] - u[1] * proj) / n,
        (d_unit[2] - u[2] * proj) / n,
        (d_unit[3] - u[3] * proj) / n,
    ]
}

pub fn sigmoid(x: f32) -> f32 {
    diffeng::graph::sigmoid(x)
}

pub fn logit(p: f32) -> f32 {
    (p / (1.0 - p)).ln()
}
