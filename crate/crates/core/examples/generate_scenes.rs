//! Generates a handful of synthetic scenes and prints per-scene statistics.

use gspnkit::scenegen::{default_catalog, generate_corpus, SceneSpec};

fn main() {
    let count: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let spec = SceneSpec::default();
    let scenes = generate_corpus(&spec, &default_catalog(), 7, 0, count).expect("scene generation");
    let mut min_inst = usize::MAX;
    for (i, s) in scenes.iter().enumerate() {
        let sizes: Vec<usize> = s.cloud.instances().iter().map(|i| i.indices.len()).collect();
        min_inst = min_inst.min(sizes.iter().copied().min().unwrap_or(usize::MAX));
        if i < 8 {
            println!("scene {i}: seed {:#018x}, {} points, {} objects, categories {:?}", s.seed, s.cloud.len(), s.objects.len(), s.categories);
        }
    }
    println!("{} scenes, smallest instance {} points", scenes.len(), min_inst);
}
