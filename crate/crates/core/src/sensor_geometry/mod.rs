//! Sensor models, point-cloud scans and spherical range-image projection.

mod range_image;
mod scan;
mod sensor;

pub use range_image::{
    back_project, pixel_of, project, RangeImage, CH_INTENSITY, CH_RANGE, CH_X, CH_Y, CH_Z,
    INVALID_RANGE, NUM_CHANNELS,
};
pub use scan::{ClassTable, PanopticLabel, PointCloudScan, RigidTransform, Vec3};
pub(crate) use scan::clamp_unit;
pub use sensor::{elevation_table_uniform, SensorModel, SensorSpec, DEFAULT_WIDTH};
