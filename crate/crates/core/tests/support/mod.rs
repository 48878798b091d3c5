//! Checks shared by the parser tests and the acceptance run.
#![allow(dead_code)]

use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toolbc::gripper::read_detections;
use toolbc::sfm::{parse_cameras_text, parse_images_text, to_camera_poses, write_cameras_text, write_images_text};

pub fn golden(name: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden").join(name);
    std::fs::read_to_string(p).unwrap()
}

/// Parse then serialize the canonical golden files and compare bytes.
pub fn golden_round_trip() -> Result<String, String> {
    let images = golden("images.txt");
    let recs = parse_images_text(&images).map_err(|e| e.to_string())?;
    if write_images_text(&recs) != images {
        return Err("images.txt changed in round trip".into());
    }
    let cams_text = golden("cameras.txt");
    let cams = parse_cameras_text(&cams_text).map_err(|e| e.to_string())?;
    if write_cameras_text(&cams) != cams_text {
        return Err("cameras.txt changed in round trip".into());
    }
    let colmap = parse_images_text(&golden("colmap_images.txt")).map_err(|e| e.to_string())?;
    let again = parse_images_text(&write_images_text(&colmap)).map_err(|e| e.to_string())?;
    if again != colmap {
        return Err("reparsed records differ".into());
    }
    Ok(format!("{} image records, {} cameras", recs.len() + colmap.len(), cams.len()))
}

const GARBAGE: &[&str] = &[
    "", "nan", "NaN", "inf", "-inf", "1e999", "-", "+", ".", "0x10", "18446744073709551616", "-1", "4294967296", "1e-400",
    "é", "\u{0}", "\"", "{", "}", "[", "null", "true", "#", "1 2", "\t", "💥", "PINHOLE", "0.0.0",
];

fn mutate_line(line: &str, rng: &mut ChaCha8Rng) -> String {
    let mut toks: Vec<String> = line.split(' ').map(String::from).collect();
    match rng.gen_range(0..8) {
        0 if !toks.is_empty() => {
            let i = rng.gen_range(0..toks.len());
            toks[i] = GARBAGE.choose(rng).unwrap().to_string();
        }
        1 if !toks.is_empty() => {
            toks.remove(rng.gen_range(0..toks.len()));
        }
        2 if !toks.is_empty() => {
            let i = rng.gen_range(0..toks.len());
            let t = toks[i].clone();
            toks.insert(i, t);
        }
        3 => {
            let i = rng.gen_range(0..=toks.len());
            toks.insert(i, GARBAGE.choose(rng).unwrap().to_string());
        }
        4 => {
            let mut b = line.as_bytes().to_vec();
            if !b.is_empty() {
                let i = rng.gen_range(0..b.len());
                b[i] = rng.gen_range(0x20..0x7f);
            }
            return String::from_utf8_lossy(&b).into_owned();
        }
        5 => {
            let cut = rng.gen_range(0..=line.len());
            return line.chars().take(cut).collect();
        }
        6 => toks.shuffle(rng),
        _ => {
            let i = rng.gen_range(0..=line.len());
            let (a, b) = line.split_at(line.char_indices().map(|(k, _)| k).find(|&k| k >= i).unwrap_or(line.len()));
            return format!("{a}\n{b}");
        }
    }
    toks.join(" ")
}

fn mutate_text(text: &str, rng: &mut ChaCha8Rng) -> String {
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    if lines.is_empty() {
        return GARBAGE.choose(rng).unwrap().to_string();
    }
    let i = rng.gen_range(0..lines.len());
    match rng.gen_range(0..10) {
        0 => {
            lines.remove(i);
        }
        1 => {
            let l = lines[i].clone();
            lines.insert(i, l);
        }
        _ => lines[i] = mutate_line(&lines[i], rng),
    }
    let mut s = lines.join("\n");
    if rng.gen_bool(0.5) {
        s.push('\n');
    }
    s
}

#[derive(Debug, Default)]
pub struct FuzzStats {
    pub cases: usize,
    pub rejected: usize,
    pub panics: usize,
    pub unstructured: usize,
}

fn check<T>(stats: &mut FuzzStats, f: impl FnOnce() -> toolbc::Result<T>) {
    stats.cases += 1;
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(_)) => {}
        Ok(Err(e)) => {
            stats.rejected += 1;
            if e.kind().is_empty() || e.to_string().is_empty() {
                stats.unstructured += 1;
            }
        }
        Err(_) => stats.panics += 1,
    }
}

/// Feed `n` mutated inputs to each text parser and to pose conversion.
pub fn fuzz_parsers(n: usize, seed: u64) -> FuzzStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = [golden("images.txt"), golden("colmap_images.txt")];
    let cameras = golden("cameras.txt");
    let detections = "{\"frame_index\":0,\"left\":[97.1,199.9],\"right\":[142.8,199.9],\"confidence\":0.88}\n\
                      {\"frame_index\":1,\"left\":[100.5,199.9],\"right\":[139.5,199.9],\"confidence\":0.2}\n";
    let mut stats = FuzzStats::default();
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    for k in 0..n {
        let text = mutate_text(&images[k % 2], &mut rng);
        check(&mut stats, || {
            let recs = parse_images_text(&text)?;
            to_camera_poses("fuzz", &recs)
        });
        let text = mutate_text(&cameras, &mut rng);
        check(&mut stats, || parse_cameras_text(&text));
        let text = mutate_text(detections, &mut rng);
        check(&mut stats, || read_detections(Cursor::new(text.as_bytes())));
    }
    std::panic::set_hook(hook);
    stats
}
