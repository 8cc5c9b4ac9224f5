//! Signed test chains and single-field block mutations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use panelchain::identity::{EnergySummary, NodeClass, Registration, Role};
use panelchain::ledger::{ActorId, AgreementId, Block, Chain, ChannelId, KeyPair, Payload, Transaction};
use panelchain::money::{Energy, Usd};
use panelchain::offchain::{FiatPaymentRecord, PaymentPurpose};

fn reg(id: &str, role: Role, class: NodeClass, seed: u64) -> (Transaction, KeyPair) {
    let k = KeyPair::derive(seed, id);
    let tx = Transaction::new(
        ActorId::from(id),
        ChannelId::public(),
        Payload::Registration(Registration {
            actor: ActorId::from(id),
            role,
            node_class: class,
            public_key: k.public_key(),
        }),
        &k,
    );
    (tx, k)
}

/// Chain of `blocks` blocks after genesis with a mix of payments and energy
/// summaries.
pub fn build_chain(blocks: u64, seed: u64) -> Chain {
    let mut c = Chain::new();
    let (r1, uk) = reg("utility", Role::Utility, NodeClass::Full, seed);
    let (r2, mk) = reg("maker", Role::Manufacturer, NodeClass::Full, seed);
    let (r3, pk) = reg("prosumer", Role::Prosumer, NodeClass::Light, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for h in 1..=blocks {
        let mut body = Vec::new();
        if h == 1 {
            body = vec![r1.clone(), r2.clone(), r3.clone()];
        }
        for _ in 0..rng.gen_range(0..3) {
            let amount = Usd::from_atoms(rng.gen_range(1..10_000_000));
            body.push(Transaction::new(
                ActorId::from("prosumer"),
                ChannelId::for_agreement(&AgreementId::from("a1")),
                Payload::Payment(FiatPaymentRecord {
                    payer: ActorId::from("prosumer"),
                    payee: ActorId::from("utility"),
                    amount,
                    purpose: PaymentPurpose::Fee,
                    agreement_id: AgreementId::from("a1"),
                    account: Some("RB-1".into()),
                    tick: h,
                }),
                &pk,
            ));
        }
        if rng.gen_bool(0.3) {
            body.push(Transaction::new(
                ActorId::from("utility"),
                ChannelId::public(),
                Payload::EnergySummary(EnergySummary {
                    month: h,
                    totals: vec![(ActorId::from("prosumer"), Energy::from_atoms(rng.gen_range(0..2_000_000)))],
                }),
                &uk,
            ));
        }
        let (v, k) = if h % 2 == 0 { ("utility", &uk) } else { ("maker", &mk) };
        let parent = c.head().header.clone();
        let b = c.create_block(&parent, body, &ActorId::from(v), k, h).unwrap();
        c.validate_and_append(b).unwrap();
    }
    c
}

enum Step {
    Key(String),
    Index(usize),
}

fn leaves(v: &Value, path: &mut Vec<Step>, out: &mut Vec<Vec<String>>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                path.push(Step::Key(k.clone()));
                leaves(x, path, out);
                path.pop();
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                path.push(Step::Index(i));
                leaves(x, path, out);
                path.pop();
            }
        }
        _ => out.push(
            path.iter()
                .map(|s| match s {
                    Step::Key(k) => k.clone(),
                    Step::Index(i) => i.to_string(),
                })
                .collect(),
        ),
    }
}

fn leaf_mut<'a>(v: &'a mut Value, path: &[String]) -> &'a mut Value {
    path.iter().fold(v, |v, seg| match v {
        Value::Object(m) => m.get_mut(seg).unwrap(),
        Value::Array(a) => &mut a[seg.parse::<usize>().unwrap()],
        _ => unreachable!(),
    })
}

fn mutate_char(c: char, rng: &mut impl Rng) -> Option<char> {
    let pick = |base: u8, n: u8, cur: u8, rng: &mut dyn rand::RngCore| {
        let shift = 1 + (rng.next_u32() as u8 % (n - 1));
        (base + (cur - base + shift) % n) as char
    };
    match c {
        '0'..='9' => Some(pick(b'0', 10, c as u8, rng)),
        'a'..='f' => Some(pick(b'a', 6, c as u8, rng)),
        'g'..='z' => Some(pick(b'g', 20, c as u8, rng)),
        _ => None,
    }
}

/// Change one scalar field of `block` to a different well-formed value.
pub fn mutate_block(block: &Block, rng: &mut impl Rng) -> Block {
    let original = serde_json::to_value(block).unwrap();
    let mut paths = Vec::new();
    leaves(&original, &mut Vec::new(), &mut paths);
    loop {
        let mut v = original.clone();
        let path = &paths[rng.gen_range(0..paths.len())];
        let leaf = leaf_mut(&mut v, path);
        match leaf {
            Value::Bool(b) => *b = !*b,
            Value::Number(n) => {
                let x = n.as_u64().unwrap();
                *leaf = Value::from(x ^ (1 << rng.gen_range(0..8)));
            }
            Value::String(s) if !s.is_empty() => {
                let chars: Vec<char> = s.chars().collect();
                let i = rng.gen_range(0..chars.len());
                let Some(c) = mutate_char(chars[i], rng) else { continue };
                let mut chars = chars;
                chars[i] = c;
                *leaf = Value::String(chars.into_iter().collect());
            }
            _ => continue,
        }
        if let Ok(b) = serde_json::from_value::<Block>(v) {
            if &b != block {
                return b;
            }
        }
    }
}

