//! Conditional self-attention GAN.

pub mod attention;
pub mod model;
pub mod train;

pub use attention::{self_attention, AttentionConfig, Footprint};
pub use model::{
    condition_planes, discriminator_forward, generator_forward, generator_input, GanConfig,
};
pub use train::{
    continue_gan, cycle_conditions, gan_losses, gan_losses_batch, log_to_csv, sample,
    sample_conditions, train, value_function, write_log, GanCheckpoint, GanLogRow,
};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_losses() {
        let (g, d) = gan_losses(0.5, 0.5);
        assert!((d - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((d - 1.3863).abs() < 1e-4);
        assert!((g - 2f64.ln()).abs() < 1e-12);
        assert!((value_function(0.5, 0.5) + 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_limit() {
        let (_, d) = gan_losses(1.0 - 1e-12, 1e-12);
        assert!(d < 1e-6);
        let (g, d) = gan_losses(1.0, 0.0);
        assert!(d.is_finite() && g.is_finite());
        assert!((g + 1e-7f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn generator_loss_direct() {
        let (g, _) = gan_losses(0.9, 0.25);
        assert!((g - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_losses_are_means() {
        let (g, d) = gan_losses_batch(&[0.5, 0.8], &[0.25, 0.1]).unwrap();
        let a = gan_losses(0.5, 0.25);
        let b = gan_losses(0.8, 0.1);
        assert!((g - (a.0 + b.0) / 2.0).abs() < 1e-12);
        assert!((d - (a.1 + b.1) / 2.0).abs() < 1e-12);
        assert!(gan_losses_batch(&[0.5], &[]).is_err());
    }

    #[test]
    fn csv_header() {
        let csv = log_to_csv(&[GanLogRow {
            step: 0,
            d_loss: 1.5,
            g_loss: 0.25,
        }]);
        assert_eq!(csv, "step,d_loss,g_loss\n0,1.5,0.25\n");
    }
}
