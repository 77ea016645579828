use nalgebra::{Matrix3, Matrix3xX, OMatrix, Rotation3, Unit, Vector3, U6, Dyn};

use super::config::{base_position, base_rotation};
use crate::model::RobotModel;

/// World poses of every link frame for one configuration.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub rotations: Vec<Matrix3<f64>>,
    pub positions: Vec<Vector3<f64>>,
}

/// 6 x nv centroidal momentum matrix: rows 0..3 map `v` to the angular
/// momentum about the CoM (world frame), rows 3..6 to the linear momentum.
pub type CentroidalMatrix = OMatrix<f64, U6, Dyn>;

pub fn forward_kinematics(model: &RobotModel, q: &[f64]) -> Kinematics {
    let n = model.n_links();
    let mut rotations = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    rotations.push(*base_rotation(q).to_rotation_matrix().matrix());
    positions.push(base_position(q));
    for (i, joint) in model.joints.iter().enumerate().skip(1) {
        let p = joint.parent.expect("validated tree");
        let angle = q[RobotModel::q_index(i)];
        let local = Rotation3::from_axis_angle(&Unit::new_unchecked(joint.axis), angle);
        let rot = rotations[p] * local.matrix();
        let pos = positions[p] + rotations[p] * joint.origin;
        rotations.push(rot);
        positions.push(pos);
    }
    Kinematics {
        rotations,
        positions,
    }
}

impl Kinematics {
    /// World position of a point given in `link` coordinates.
    pub fn point(&self, link: usize, offset: &Vector3<f64>) -> Vector3<f64> {
        self.positions[link] + self.rotations[link] * offset
    }

    pub fn link_com(&self, model: &RobotModel, link: usize) -> Vector3<f64> {
        self.point(link, &model.links[link].com_offset)
    }

    pub fn keypoint(&self, model: &RobotModel, k: usize) -> Vector3<f64> {
        let kp = &model.keypoints[k];
        self.point(kp.link, &kp.offset)
    }

    pub fn contact_point(&self, model: &RobotModel, c: usize) -> Vector3<f64> {
        let cp = &model.contact_points[c];
        self.point(cp.link, &cp.offset)
    }

    /// World-frame axis of actuated joint `j`.
    pub fn joint_axis(&self, model: &RobotModel, j: usize) -> Vector3<f64> {
        self.rotations[j] * model.joints[j].axis
    }

    /// Maps `v` to the world linear velocity of `offset` on `link`.
    pub fn point_jacobian(
        &self,
        model: &RobotModel,
        link: usize,
        offset: &Vector3<f64>,
    ) -> Matrix3xX<f64> {
        let x = self.point(link, offset);
        let mut jac = Matrix3xX::zeros(model.nv());
        self.accumulate_point_jacobian(model, link, &x, 1.0, &mut jac);
        jac
    }

    /// `jac += scale * J(x)` for the world point `x` rigidly attached to `link`.
    pub(crate) fn accumulate_point_jacobian(
        &self,
        model: &RobotModel,
        link: usize,
        x: &Vector3<f64>,
        scale: f64,
        jac: &mut Matrix3xX<f64>,
    ) {
        for a in 0..3 {
            jac[(a, a)] += scale;
        }
        let r0 = &self.rotations[0];
        let arm0 = x - self.positions[0];
        for a in 0..3 {
            let col = r0.column(a).cross(&arm0) * scale;
            let mut dst = jac.column_mut(3 + a);
            dst += col;
        }
        for &j in &model.chain(link)[1..] {
            let axis = self.joint_axis(model, j);
            let col = axis.cross(&(x - self.positions[j])) * scale;
            let mut dst = jac.column_mut(RobotModel::v_index(j));
            dst += col;
        }
    }

    /// Maps `v` to the world angular velocity of `link`.
    pub fn angular_jacobian(&self, model: &RobotModel, link: usize) -> Matrix3xX<f64> {
        let mut jac = Matrix3xX::zeros(model.nv());
        for a in 0..3 {
            jac.column_mut(3 + a).copy_from(&self.rotations[0].column(a));
        }
        for &j in &model.chain(link)[1..] {
            jac.column_mut(RobotModel::v_index(j))
                .copy_from(&self.joint_axis(model, j));
        }
        jac
    }

    pub fn center_of_mass(&self, model: &RobotModel) -> Vector3<f64> {
        let mut acc = Vector3::zeros();
        for (i, link) in model.links.iter().enumerate() {
            acc += self.link_com(model, i) * link.mass;
        }
        acc / model.total_mass
    }

    pub fn com_jacobian(&self, model: &RobotModel) -> Matrix3xX<f64> {
        let mut jac = Matrix3xX::zeros(model.nv());
        for (i, link) in model.links.iter().enumerate() {
            if link.mass == 0.0 {
                continue;
            }
            let c = self.link_com(model, i);
            self.accumulate_point_jacobian(model, i, &c, link.mass / model.total_mass, &mut jac);
        }
        jac
    }

    /// World-frame inertia of `link` about its CoM.
    pub fn world_inertia(&self, model: &RobotModel, link: usize) -> Matrix3<f64> {
        let r = &self.rotations[link];
        r * model.links[link].inertia * r.transpose()
    }

    /// `A_CAM v` split into (angular about the CoM, linear), by a velocity
    /// recursion over the tree rather than forming the matrix.
    pub fn centroidal_momentum(&self, model: &RobotModel, v: &[f64]) -> (Vector3<f64>, Vector3<f64>) {
        let n = model.n_links();
        let mut omega = Vec::with_capacity(n);
        let mut vel = Vec::with_capacity(n);
        omega.push(self.rotations[0] * Vector3::new(v[3], v[4], v[5]));
        vel.push(Vector3::new(v[0], v[1], v[2]));
        for (j, joint) in model.joints.iter().enumerate().skip(1) {
            let p = joint.parent.expect("validated tree");
            vel.push(vel[p] + omega[p].cross(&(self.positions[j] - self.positions[p])));
            omega.push(omega[p] + self.joint_axis(model, j) * v[RobotModel::v_index(j)]);
        }
        let com = self.center_of_mass(model);
        let mut angular = Vector3::zeros();
        let mut linear = Vector3::zeros();
        for (i, link) in model.links.iter().enumerate() {
            let c = self.link_com(model, i);
            let cdot = vel[i] + omega[i].cross(&(c - self.positions[i]));
            angular += (c - com).cross(&cdot) * link.mass + self.world_inertia(model, i) * omega[i];
            linear += cdot * link.mass;
        }
        (angular, linear)
    }

    pub fn centroidal_momentum_matrix(&self, model: &RobotModel) -> CentroidalMatrix {
        let nv = model.nv();
        let com = self.center_of_mass(model);
        let mut a = CentroidalMatrix::zeros(nv);
        for (i, link) in model.links.iter().enumerate() {
            let c = self.link_com(model, i);
            let jc = self.point_jacobian(model, i, &link.com_offset);
            let jw = self.angular_jacobian(model, i);
            let arm = (c - com).cross_matrix() * link.mass;
            let ang = arm * &jc + self.world_inertia(model, i) * jw;
            let mut top = a.fixed_rows_mut::<3>(0);
            top += ang;
            let mut bottom = a.fixed_rows_mut::<3>(3);
            bottom += jc * link.mass;
        }
        a
    }
}

pub fn center_of_mass(model: &RobotModel, q: &[f64]) -> Vector3<f64> {
    forward_kinematics(model, q).center_of_mass(model)
}

pub fn com_jacobian(model: &RobotModel, q: &[f64]) -> Matrix3xX<f64> {
    forward_kinematics(model, q).com_jacobian(model)
}

pub fn point_jacobian(
    model: &RobotModel,
    q: &[f64],
    link: usize,
    offset: &Vector3<f64>,
) -> Matrix3xX<f64> {
    forward_kinematics(model, q).point_jacobian(model, link, offset)
}

pub fn centroidal_momentum_matrix(model: &RobotModel, q: &[f64]) -> CentroidalMatrix {
    forward_kinematics(model, q).centroidal_momentum_matrix(model)
}
