use crate::error::{Error, Result};

pub const KIN_DIM: usize = 76;
pub const BLOCK_DIM: usize = 19;

const POSITION: usize = 0;
const ROTATION: usize = 3;
const LINEAR_VELOCITY: usize = 12;
const ANGULAR_VELOCITY: usize = 15;
const GRIPPER: usize = 18;

/// The four 19-value blocks, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Manipulator {
    MasterLeft,
    MasterRight,
    SlaveLeft,
    SlaveRight,
}

impl Manipulator {
    pub const ALL: [Manipulator; 4] = [
        Manipulator::MasterLeft,
        Manipulator::MasterRight,
        Manipulator::SlaveLeft,
        Manipulator::SlaveRight,
    ];

    fn offset(self) -> usize {
        BLOCK_DIM * self as usize
    }
}

/// Per-frame robot state: for each manipulator, tool-tip position (m),
/// row-major rotation matrix, linear velocity (m/s), angular velocity (rad/s)
/// and gripper angle (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicsVector(pub [f32; KIN_DIM]);

impl Default for KinematicsVector {
    fn default() -> Self {
        KinematicsVector([0.0; KIN_DIM])
    }
}

impl KinematicsVector {
    pub fn from_slice(values: &[f32]) -> Result<Self> {
        let arr: [f32; KIN_DIM] = values.try_into().map_err(|_| {
            Error::contract(format!(
                "kinematics vector needs {KIN_DIM} values, got {}",
                values.len()
            ))
        })?;
        Ok(KinematicsVector(arr))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn block(&self, m: Manipulator) -> &[f32] {
        &self.0[m.offset()..m.offset() + BLOCK_DIM]
    }

    pub fn block_mut(&mut self, m: Manipulator) -> &mut [f32] {
        let o = m.offset();
        &mut self.0[o..o + BLOCK_DIM]
    }

    pub fn position(&self, m: Manipulator) -> [f32; 3] {
        self.block(m)[POSITION..POSITION + 3].try_into().unwrap()
    }

    pub fn rotation(&self, m: Manipulator) -> [f32; 9] {
        self.block(m)[ROTATION..ROTATION + 9].try_into().unwrap()
    }

    pub fn linear_velocity(&self, m: Manipulator) -> [f32; 3] {
        self.block(m)[LINEAR_VELOCITY..LINEAR_VELOCITY + 3]
            .try_into()
            .unwrap()
    }

    pub fn angular_velocity(&self, m: Manipulator) -> [f32; 3] {
        self.block(m)[ANGULAR_VELOCITY..ANGULAR_VELOCITY + 3]
            .try_into()
            .unwrap()
    }

    pub fn gripper(&self, m: Manipulator) -> f32 {
        self.block(m)[GRIPPER]
    }

    pub fn set_block(
        &mut self,
        m: Manipulator,
        position: [f32; 3],
        rotation: [f32; 9],
        linear_velocity: [f32; 3],
        angular_velocity: [f32; 3],
        gripper: f32,
    ) {
        let b = self.block_mut(m);
        b[POSITION..POSITION + 3].copy_from_slice(&position);
        b[ROTATION..ROTATION + 9].copy_from_slice(&rotation);
        b[LINEAR_VELOCITY..LINEAR_VELOCITY + 3].copy_from_slice(&linear_velocity);
        b[ANGULAR_VELOCITY..ANGULAR_VELOCITY + 3].copy_from_slice(&angular_velocity);
        b[GRIPPER] = gripper;
    }

    /// Largest deviation of `R R^T` from the identity over all four blocks.
    pub fn orthonormality_error(&self) -> f64 {
        Manipulator::ALL
            .iter()
            .map(|&m| {
                let r = self.rotation(m);
                let mut worst = 0.0f64;
                for i in 0..3 {
                    for j in 0..3 {
                        let dot: f64 = (0..3)
                            .map(|k| r[3 * i + k] as f64 * r[3 * j + k] as f64)
                            .sum();
                        let expect = if i == j { 1.0 } else { 0.0 };
                        worst = worst.max((dot - expect).abs());
                    }
                }
                worst
            })
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENTITY: [f32; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

    #[test]
    fn blocks_follow_master_then_slave_layout() {
        let mut k = KinematicsVector::default();
        k.set_block(
            Manipulator::SlaveLeft,
            [1.0, 2.0, 3.0],
            IDENTITY,
            [0.0; 3],
            [0.0; 3],
            0.5,
        );
        assert_eq!(k.0[38], 1.0);
        assert_eq!(k.0[38 + 18], 0.5);
        assert_eq!(k.gripper(Manipulator::SlaveLeft), 0.5);
        assert_eq!(k.position(Manipulator::MasterLeft), [0.0; 3]);
    }

    #[test]
    fn orthonormality() {
        let mut k = KinematicsVector::default();
        for m in Manipulator::ALL {
            k.set_block(m, [0.0; 3], IDENTITY, [0.0; 3], [0.0; 3], 0.0);
        }
        assert_eq!(k.orthonormality_error(), 0.0);
        k.0[3] = 2.0;
        assert!(k.orthonormality_error() > 1.0);
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(KinematicsVector::from_slice(&[0.0; 75]).is_err());
        assert!(KinematicsVector::from_slice(&[0.0; 76]).is_ok());
    }
}
