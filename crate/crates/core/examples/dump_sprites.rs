fn main() {
    for seed in [1u64, 2, 3, 7] {
        let s = pose_transfer::data::generate_sample(seed, 32, 32);
        pose_transfer::image_io::write_ppm(std::path::Path::new(&format!("/tmp/sprite_{}_s.ppm", seed)), &s.x_s).unwrap();
        pose_transfer::image_io::write_ppm(std::path::Path::new(&format!("/tmp/sprite_{}_t.ppm", seed)), &s.x_t).unwrap();
        let cov = s.x_s.data().iter().filter(|v| **v > 0.05).count() as f64 / s.x_s.numel() as f64;
        println!("seed {}: coverage {:.3}", seed, cov);
    }
    let big = pose_transfer::data::generate_sample(11, 64, 48);
    pose_transfer::image_io::write_ppm(std::path::Path::new("/tmp/sprite_big_s.ppm"), &big.x_s).unwrap();
    pose_transfer::image_io::write_ppm(std::path::Path::new("/tmp/sprite_big_t.ppm"), &big.x_t).unwrap();
}
