//! MinFat tagged pointers.
//!
//! A pointer word carries the size exponent `B` of its allocation in the top
//! six bits and the byte address in the low 58 bits. Allocations are `2^B`
//! sized and `2^B` aligned, so clearing the low `B` bits of any interior
//! address yields the allocation base, which doubles as the object's implicit
//! ID.

use std::fmt;

use thiserror::Error;

/// Bit position of the size exponent.
pub const TAG_SHIFT: u32 = 58;
/// Mask selecting the 58-bit address field.
pub const ADDR_MASK: u64 = (1 << TAG_SHIFT) - 1;
/// Smallest exponent the allocator produces (16-byte objects).
pub const MIN_EXP: u8 = 4;
/// Largest exponent the allocator produces.
pub const MAX_EXP: u8 = 46;
/// Bases must lie below this bound.
pub const ADDR_LIMIT: u64 = 1 << 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MinFatError {
    #[error("requested size {0} is outside [1, 2^46]")]
    SizeOutOfRange(u64),
    #[error("base {base:#x} is not aligned to 2^{exp}")]
    AlignmentError { base: u64, exp: u8 },
    #[error("exponent {0} is outside [4, 46]")]
    BadExponent(u8),
    #[error("base {0:#x} is beyond the 48-bit address limit")]
    AddressOutOfRange(u64),
    #[error("word {0:#018x} does not carry a pointer tag")]
    NotAPointer(u64),
}

/// Power-of-two size class of an allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SizeClass {
    pub exp: u8,
    pub alloc_size: u64,
}

impl SizeClass {
    pub fn from_exp(exp: u8) -> Result<Self, MinFatError> {
        if !(MIN_EXP..=MAX_EXP).contains(&exp) {
            return Err(MinFatError::BadExponent(exp));
        }
        Ok(SizeClass { exp, alloc_size: 1 << exp })
    }
}

/// A 64-bit word in MinFat layout. `B = 0` is the null/non-pointer encoding.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct TaggedWord(u64);

impl TaggedWord {
    pub const NULL: TaggedWord = TaggedWord(0);

    pub const fn from_raw(raw: u64) -> Self {
        TaggedWord(raw)
    }

    /// Builds a word from its two fields without any validation.
    pub const fn from_parts(exp: u8, addr: u64) -> Self {
        TaggedWord(((exp as u64) << TAG_SHIFT) | (addr & ADDR_MASK))
    }

    pub const fn raw(self) -> u64 {
        self.0
    }

    pub const fn exp(self) -> u8 {
        (self.0 >> TAG_SHIFT) as u8
    }

    pub const fn addr(self) -> u64 {
        self.0 & ADDR_MASK
    }

    /// True when the tag is a valid allocator exponent.
    pub const fn is_pointer(self) -> bool {
        let exp = self.exp();
        exp >= MIN_EXP && exp <= MAX_EXP
    }

    /// Pointer arithmetic inside the address field; the tag is preserved.
    pub const fn offset(self, bytes: u64) -> Self {
        TaggedWord::from_parts(self.exp(), self.addr().wrapping_add(bytes))
    }
}

impl fmt::Debug for TaggedWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TaggedWord(B={}, addr={:#x})", self.exp(), self.addr())
    }
}

impl fmt::Display for TaggedWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#018x}", self.0)
    }
}

/// `B = max(4, ceil(log2(requested)))`.
pub fn size_class(requested: u64) -> Result<SizeClass, MinFatError> {
    if requested == 0 || requested > 1 << MAX_EXP {
        return Err(MinFatError::SizeOutOfRange(requested));
    }
    let exp = requested.next_power_of_two().trailing_zeros() as u8;
    SizeClass::from_exp(exp.max(MIN_EXP))
}

pub fn encode(base: u64, exp: u8) -> Result<TaggedWord, MinFatError> {
    if !(MIN_EXP..=MAX_EXP).contains(&exp) {
        return Err(MinFatError::BadExponent(exp));
    }
    if base >= ADDR_LIMIT {
        return Err(MinFatError::AddressOutOfRange(base));
    }
    if base & ((1 << exp) - 1) != 0 {
        return Err(MinFatError::AlignmentError { base, exp });
    }
    Ok(TaggedWord::from_parts(exp, base))
}

/// The implicit object ID: the address field truncated to its `2^B` boundary.
pub fn id_of(p: TaggedWord) -> Result<u64, MinFatError> {
    if !p.is_pointer() {
        return Err(MinFatError::NotAPointer(p.raw()));
    }
    Ok(p.addr() & !((1u64 << p.exp()) - 1))
}

/// Masks off the tag, keeping any interior offset.
pub fn strip(p: TaggedWord) -> u64 {
    p.addr()
}
