/** Minimal NHWC tensors on flat Float64Arrays plus the matmul kernels
 * every layer rides on.  Loops are unrolled two ways in k and four in n;
 * V8 runs them at a few GFLOP/s, which is what makes CPU training of the
 * small reconstructor practical. */

export interface Tensor4 {
  data: Float64Array;
  b: number;
  h: number;
  w: number;
  c: number;
}

export function zeros4(b: number, h: number, w: number, c: number): Tensor4 {
  return { data: new Float64Array(b * h * w * c), b, h, w, c };
}

export function like(t: Tensor4): Tensor4 {
  return zeros4(t.b, t.h, t.w, t.c);
}

export function numel(t: Tensor4): number {
  return t.b * t.h * t.w * t.c;
}

/** C[M,N] += A[M,K] x B[K,N] (row-major). */
export function matmulAcc(
  A: Float64Array, B: Float64Array, C: Float64Array,
  M: number, K: number, N: number,
): void {
  const K2 = K & ~1;
  const N4 = N & ~3;
  for (let i = 0; i < M; i++) {
    const ai = i * K;
    const ci = i * N;
    let k = 0;
    for (; k < K2; k += 2) {
      const a0 = A[ai + k];
      const a1 = A[ai + k + 1];
      const b0 = k * N;
      const b1 = b0 + N;
      let j = 0;
      for (; j < N4; j += 4) {
        C[ci + j] += a0 * B[b0 + j] + a1 * B[b1 + j];
        C[ci + j + 1] += a0 * B[b0 + j + 1] + a1 * B[b1 + j + 1];
        C[ci + j + 2] += a0 * B[b0 + j + 2] + a1 * B[b1 + j + 2];
        C[ci + j + 3] += a0 * B[b0 + j + 3] + a1 * B[b1 + j + 3];
      }
      for (; j < N; j++) C[ci + j] += a0 * B[b0 + j] + a1 * B[b1 + j];
    }
    for (; k < K; k++) {
      const a = A[ai + k];
      const bk = k * N;
      for (let j = 0; j < N; j++) C[ci + j] += a * B[bk + j];
    }
  }
}

/** C[K,N] += A[M,K]^T x B[M,N] — the weight-gradient contraction. */
export function matmulATBAcc(
  A: Float64Array, B: Float64Array, C: Float64Array,
  M: number, K: number, N: number,
): void {
  const N4 = N & ~3;
  for (let i = 0; i < M; i++) {
    const ai = i * K;
    const bi = i * N;
    for (let k = 0; k < K; k++) {
      const a = A[ai + k];
      if (a === 0) continue;
      const ck = k * N;
      let j = 0;
      for (; j < N4; j += 4) {
        C[ck + j] += a * B[bi + j];
        C[ck + j + 1] += a * B[bi + j + 1];
        C[ck + j + 2] += a * B[bi + j + 2];
        C[ck + j + 3] += a * B[bi + j + 3];
      }
      for (; j < N; j++) C[ck + j] += a * B[bi + j];
    }
  }
}

/** C[M,K] += A[M,N] x B[K,N]^T — the input-gradient contraction. */
export function matmulABTAcc(
  A: Float64Array, B: Float64Array, C: Float64Array,
  M: number, K: number, N: number,
): void {
  const N4 = N & ~3;
  for (let i = 0; i < M; i++) {
    const ai = i * N;
    const ci = i * K;
    for (let k = 0; k < K; k++) {
      const bk = k * N;
      let acc = 0;
      let j = 0;
      for (; j < N4; j += 4) {
        acc += A[ai + j] * B[bk + j]
          + A[ai + j + 1] * B[bk + j + 1]
          + A[ai + j + 2] * B[bk + j + 2]
          + A[ai + j + 3] * B[bk + j + 3];
      }
      for (; j < N; j++) acc += A[ai + j] * B[bk + j];
      C[ci + k] += acc;
    }
  }
}
