//! Embedded surrogate pools shared by the synthetic generator and the
//! surrogate replacer. Every value here is fabricated.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::category::PhiCategory;

pub const FIRST_NAMES: &[&str] = &[
    "Joshua",
    "Howard",
    "Mabel",
    "Ignatius",
    "Rosalind",
    "Thaddeus",
    "Ophelia",
    "Cornelius",
    "Lavinia",
    "Barnaby",
    "Henrietta",
    "Ezekiel",
    "Philippa",
    "Leopold",
    "Winifred",
    "Octavius",
    "Beatrix",
    "Ambrose",
    "Clementine",
    "Percival",
    "Griselda",
    "Horatio",
    "Imogen",
    "Lucius",
    "Marguerite",
    "Nathaniel",
    "Petronella",
    "Quentin",
    "Seraphina",
    "Tobias",
    "Ursula",
    "Valentin",
];

pub const LAST_NAMES: &[&str] = &[
    "Howard",
    "Quimby",
    "Vanterpool",
    "Okonkwo",
    "Delacroix",
    "Abernathy",
    "Wojcik",
    "Falkenrath",
    "Yamashiro",
    "Castellanos",
    "Pemberton",
    "Lindqvist",
    "Achterberg",
    "Mbeki",
    "Rasmussen",
    "Thistlewood",
    "Oyelaran",
    "Kowalczyk",
    "Zanetti",
    "Brightwater",
    "Haverford",
    "Nakagawa",
    "Esterhazy",
    "Montgomery",
    "Prendergast",
    "Ravensworth",
    "Szczepanski",
    "Underhill",
];

pub const PROFESSIONS: &[&str] = &[
    "manager",
    "electrician",
    "accountant",
    "carpenter",
    "librarian",
    "plumber",
    "architect",
    "schoolteacher",
    "machinist",
    "pharmacist",
    "firefighter",
    "welder",
    "bookkeeper",
    "journalist",
    "veterinarian",
    "locksmith",
];

pub const STREET_NAMES: &[&str] = &[
    "Longview",
    "Maplecrest",
    "Harborview",
    "Willowbend",
    "Stonebridge",
    "Ashford",
    "Briarwood",
    "Cedarhurst",
    "Foxglove",
    "Glenmoor",
    "Hollowell",
    "Juniper",
    "Kingsley",
    "Larkspur",
];

pub const STREET_SUFFIXES: &[&str] = &["Drive", "Street", "Avenue", "Road", "Lane", "Court", "Boulevard"];

pub const HOSPITAL_SUFFIXES: &[&str] = &["Memorial Hospital", "Medical Center", "General Hospital", "Clinic"];

pub const EMAIL_DOMAINS: &[&str] = &["example.org", "example.com", "mail.example.net", "clinic.example.edu"];

/// Draws one fresh surrogate surface for `category`. `Others` has no pool and
/// yields a generic placeholder.
pub fn draw<R: Rng + ?Sized>(category: PhiCategory, rng: &mut R) -> String {
    match category {
        PhiCategory::Name => name(rng),
        PhiCategory::Profession => pick(PROFESSIONS, rng).to_string(),
        PhiCategory::Location => location(rng),
        PhiCategory::Age => age(rng),
        PhiCategory::Date => date(rng),
        PhiCategory::Contact => contact(rng),
        PhiCategory::Id => id(rng),
        PhiCategory::Others => "[other]".to_string(),
    }
}

fn pick<'a, R: Rng + ?Sized>(pool: &'a [&'a str], rng: &mut R) -> &'a str {
    pool.choose(rng).copied().expect("pools are non-empty")
}

pub fn name<R: Rng + ?Sized>(rng: &mut R) -> String {
    format!("{} {}", pick(FIRST_NAMES, rng), pick(LAST_NAMES, rng))
}

pub fn location<R: Rng + ?Sized>(rng: &mut R) -> String {
    if rng.random_bool(0.6) {
        format!("{} {} {}", rng.random_range(10..10000), pick(STREET_NAMES, rng), pick(STREET_SUFFIXES, rng))
    } else {
        format!("{} {}", pick(LAST_NAMES, rng), pick(HOSPITAL_SUFFIXES, rng))
    }
}

pub fn age<R: Rng + ?Sized>(rng: &mut R) -> String {
    let years: u32 = rng.random_range(18..96);
    if rng.random_bool(0.5) {
        format!("{years} years old")
    } else {
        format!("age {years}")
    }
}

/// MM/DD/YYYY in the far future, following the benchmark's surrogate style.
pub fn date<R: Rng + ?Sized>(rng: &mut R) -> String {
    let month: u32 = rng.random_range(1..=12);
    let day: u32 = rng.random_range(1..=28);
    let year: u32 = rng.random_range(2050..2100);
    format!("{month:02}/{day:02}/{year}")
}

pub fn phone<R: Rng + ?Sized>(rng: &mut R) -> String {
    let area: u32 = rng.random_range(200..1000);
    let exchange: u32 = rng.random_range(200..1000);
    let line: u32 = rng.random_range(0..10000);
    if rng.random_bool(0.5) {
        format!("{area}-{exchange}-{line:04}")
    } else {
        format!("({area}) {exchange}-{line:04}")
    }
}

pub fn email<R: Rng + ?Sized>(rng: &mut R) -> String {
    format!(
        "{}.{}@{}",
        pick(FIRST_NAMES, rng).to_ascii_lowercase(),
        pick(LAST_NAMES, rng).to_ascii_lowercase(),
        pick(EMAIL_DOMAINS, rng)
    )
}

pub fn contact<R: Rng + ?Sized>(rng: &mut R) -> String {
    if rng.random_bool(0.7) {
        phone(rng)
    } else {
        email(rng)
    }
}

/// Medical-record-number shaped identifier.
pub fn id<R: Rng + ?Sized>(rng: &mut R) -> String {
    if rng.random_bool(0.5) {
        let digits: u32 = rng.random_range(7..10);
        (0..digits)
            .map(|i| {
                let d: u8 = if i == 0 { rng.random_range(1..10) } else { rng.random_range(0..10) };
                char::from(b'0' + d)
            })
            .collect()
    } else {
        let a = char::from(b'A' + rng.random_range(0..26u8));
        let b = char::from(b'A' + rng.random_range(0..26u8));
        format!("{a}{b}{:06}", rng.random_range(0..1_000_000u32))
    }
}
