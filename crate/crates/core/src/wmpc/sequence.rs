use serde::{Deserialize, Serialize};

/// Joint-space waypoints with the final goal as last element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointSequence {
    pub points: Vec<Vec<f64>>,
    pub cursor: usize,
}

impl WaypointSequence {
    /// Panics on an empty list.
    pub fn new(points: Vec<Vec<f64>>) -> Self {
        assert!(!points.is_empty(), "waypoint sequence needs a goal");
        Self { points, cursor: 0 }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Only the goal is left; waypoint and goal coincide.
    pub fn is_final(&self) -> bool {
        self.cursor + 1 >= self.points.len()
    }

    pub fn waypoint(&self) -> &[f64] {
        &self.points[self.cursor.min(self.points.len() - 1)]
    }

    pub fn goal(&self) -> &[f64] {
        &self.points[(self.cursor + 1).min(self.points.len() - 1)]
    }

    pub fn final_goal(&self) -> &[f64] {
        self.points.last().expect("non-empty")
    }

    /// Moves to the next pair; false when already final.
    pub fn advance(&mut self) -> bool {
        if self.is_final() {
            return false;
        }
        self.cursor += 1;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_and_advance() {
        let mut s = WaypointSequence::new(vec![vec![1.0], vec![2.0], vec![3.0]]);
        assert_eq!((s.waypoint(), s.goal()), (&[1.0][..], &[2.0][..]));
        assert!(!s.is_final());
        assert!(s.advance());
        assert_eq!((s.waypoint(), s.goal()), (&[2.0][..], &[3.0][..]));
        assert!(s.advance());
        assert!(s.is_final());
        assert_eq!((s.waypoint(), s.goal()), (&[3.0][..], &[3.0][..]));
        assert!(!s.advance());
        assert_eq!(s.cursor, 2);
    }

    #[test]
    fn single_goal_is_final() {
        let s = WaypointSequence::new(vec![vec![0.5, 0.5]]);
        assert!(s.is_final());
        assert_eq!(s.waypoint(), s.goal());
    }
}
