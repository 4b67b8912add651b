use std::alloc::{self, Layout};
use std::fmt;
use std::ptr::NonNull;
use std::sync::{Arc, Mutex};

/// Alignment of buffers returned by [`IoBuffer::new`].
pub const BUFFER_ALIGN: usize = 4096;

struct AlignedBytes {
    ptr: NonNull<u8>,
    layout: Layout,
    start: usize,
    len: usize,
}

// SAFETY: the allocation is uniquely owned and only reached through the
// surrounding `Mutex`.
unsafe impl Send for AlignedBytes {}

impl AlignedBytes {
    fn zeroed(len: usize, align: usize, start: usize) -> Self {
        let layout = Layout::from_size_align((len + start).max(1), align).expect("buffer layout");
        // SAFETY: layout has non-zero size.
        let raw = unsafe { alloc::alloc_zeroed(layout) };
        let ptr = NonNull::new(raw).unwrap_or_else(|| alloc::handle_alloc_error(layout));
        Self {
            ptr,
            layout,
            start,
            len,
        }
    }

    fn addr(&self) -> usize {
        self.ptr.as_ptr() as usize + self.start
    }

    fn as_slice(&self) -> &[u8] {
        // SAFETY: `start + len` lies within the allocation, which is
        // initialised by `alloc_zeroed`.
        unsafe { std::slice::from_raw_parts(self.ptr.as_ptr().add(self.start), self.len) }
    }

    fn as_mut_slice(&mut self) -> &mut [u8] {
        // SAFETY: as above, and `&mut self` guarantees exclusivity.
        unsafe { std::slice::from_raw_parts_mut(self.ptr.as_ptr().add(self.start), self.len) }
    }
}

impl Drop for AlignedBytes {
    fn drop(&mut self) {
        // SAFETY: allocated in `zeroed` with this layout.
        unsafe { alloc::dealloc(self.ptr.as_ptr(), self.layout) }
    }
}

enum Storage {
    Backed(Mutex<AlignedBytes>),
    /// Length only; accepted by the simulated backend, which moves no data.
    Unbacked,
}

struct Inner {
    storage: Storage,
    len: usize,
    addr: usize,
}

/// Shared, aligned I/O buffer. Clones refer to the same memory.
#[derive(Clone)]
pub struct IoBuffer {
    inner: Arc<Inner>,
}

impl fmt::Debug for IoBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IoBuffer")
            .field("len", &self.inner.len)
            .field("addr", &format_args!("{:#x}", self.inner.addr))
            .field("backed", &self.is_backed())
            .finish()
    }
}

impl IoBuffer {
    /// Zero-filled buffer aligned to [`BUFFER_ALIGN`].
    pub fn new(len: usize) -> Self {
        Self::misaligned(len, 0)
    }

    pub fn from_slice(data: &[u8]) -> Self {
        let b = Self::new(data.len());
        b.with_mut(|s| s.copy_from_slice(data));
        b
    }

    /// Buffer whose address is `skew` bytes past a [`BUFFER_ALIGN`] boundary.
    pub fn misaligned(len: usize, skew: usize) -> Self {
        let bytes = AlignedBytes::zeroed(len, BUFFER_ALIGN, skew);
        let addr = bytes.addr();
        Self {
            inner: Arc::new(Inner {
                storage: Storage::Backed(Mutex::new(bytes)),
                len,
                addr,
            }),
        }
    }

    /// A length without memory, for simulated devices. Its nominal address
    /// is aligned.
    pub fn unbacked(len: usize) -> Self {
        Self {
            inner: Arc::new(Inner {
                storage: Storage::Unbacked,
                len,
                addr: BUFFER_ALIGN,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.len
    }

    pub fn is_empty(&self) -> bool {
        self.inner.len == 0
    }

    pub fn addr(&self) -> usize {
        self.inner.addr
    }

    pub fn is_backed(&self) -> bool {
        matches!(self.inner.storage, Storage::Backed(_))
    }

    /// Runs `f` on the contents. Returns `None` for unbacked buffers.
    pub fn with<R>(&self, f: impl FnOnce(&[u8]) -> R) -> Option<R> {
        match &self.inner.storage {
            Storage::Backed(m) => Some(f(m.lock().unwrap().as_slice())),
            Storage::Unbacked => None,
        }
    }

    /// Runs `f` on the mutable contents. Returns `None` for unbacked buffers.
    pub fn with_mut<R>(&self, f: impl FnOnce(&mut [u8]) -> R) -> Option<R> {
        match &self.inner.storage {
            Storage::Backed(m) => Some(f(m.lock().unwrap().as_mut_slice())),
            Storage::Unbacked => None,
        }
    }

    pub fn to_vec(&self) -> Option<Vec<u8>> {
        self.with(<[u8]>::to_vec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_and_contents() {
        let b = IoBuffer::new(8192);
        assert_eq!(b.addr() % BUFFER_ALIGN, 0);
        assert!(b.with(|s| s.iter().all(|&x| x == 0)).unwrap());
        let s = IoBuffer::misaligned(512, 100);
        assert_eq!(s.addr() % 512, 100);
        let c = IoBuffer::from_slice(b"hello");
        assert_eq!(c.to_vec().unwrap(), b"hello");
        let clone = c.clone();
        clone.with_mut(|s| s[0] = b'j');
        assert_eq!(c.to_vec().unwrap(), b"jello");
        assert_eq!(IoBuffer::unbacked(1 << 30).to_vec(), None);
        assert!(IoBuffer::new(0).is_empty());
    }
}
