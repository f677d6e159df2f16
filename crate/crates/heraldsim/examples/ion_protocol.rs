//! Walk through the ion-side protocol one step at a time for the four cycle
//! histories that matter: a completed absorption, an idle cycle, a
//! spontaneous decay, and a failed preparation (with and without the 397 nm
//! shelving extension).
//!
//! The two 729 nm pulses swap the meanings of bright and dark so that a dark
//! ion marks an absorption-like history.
//!
//! ```bash
//! cargo run --release --example ion_protocol
//! ```

use heraldsim::ionphysics::{
    absorb_photon, fluorescence_measure, pi_pulse, shelve_397, IonParams, IonState,
};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn discriminate(state: IonState, params: &IonParams, rng: &mut ChaCha12Rng) -> String {
    let after_first = pi_pulse(state, IonState::S12, IonState::D52Aux, params, rng).unwrap();
    let after_second =
        pi_pulse(after_first, IonState::D52Prep, IonState::S12, params, rng).unwrap();
    let outcome = fluorescence_measure(after_second).unwrap();
    format!("{state:?} -> {after_first:?} -> {after_second:?} => {outcome:?}")
}

fn main() {
    let params = IonParams::default();
    let mut rng = ChaCha12Rng::seed_from_u64(1);

    println!("-- completed absorption --");
    // Prepared ion absorbs a resonant photon; the 93.5% branch releases the
    // 393 nm herald after an exponential delay.
    let mut state = IonState::D52Prep;
    loop {
        let (next, delay) = absorb_photon(state, &params, &mut rng);
        state = next;
        match delay {
            Some(ps) => {
                println!("absorbed; 393 nm herald emitted after {ps} ps");
                break;
            }
            None => println!("absorbed but fell back to D52Prep (6.5% branch); retrying"),
        }
    }
    println!("discrimination: {}", discriminate(state, &params, &mut rng));

    println!();
    println!("-- no absorption --");
    println!(
        "discrimination: {}",
        discriminate(IonState::D52Prep, &params, &mut rng)
    );

    println!();
    println!("-- spontaneous decay during the window --");
    // Decay to the ground state mimics an absorption history.
    println!(
        "discrimination: {}",
        discriminate(IonState::S12, &params, &mut rng)
    );

    println!();
    println!("-- failed preparation --");
    println!(
        "without shelving: {}",
        discriminate(IonState::S12, &params, &mut rng)
    );
    let shelved = shelve_397(IonState::S12);
    println!(
        "with shelving:    {}",
        discriminate(shelved, &params, &mut rng)
    );
}
