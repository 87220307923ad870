// Compress a synthetic 128-d teacher set to 32 dims, rotate it, and recover
// the rotation with the closed-form Procrustes solver.

#include <cstdio>

#include "ep2/ep2.hpp"

int main() {
  const ep2::DescriptorSet teacher = ep2::gen_teacher_batch(32, 128, /*seed=*/7);
  const ep2::CompressedTeacher lra = ep2::lra_compress(teacher, 32);
  std::printf("gram gap after compression: %.3e\n", ep2::gram_gap(lra.compressed, teacher.matrix()));

  const ep2::Matrix raw = ep2::gen_teacher_batch(32, 32, 11).matrix();
  const Eigen::HouseholderQR<ep2::Matrix> qr(raw);
  const ep2::Matrix rotation = qr.householderQ();

  const ep2::DescriptorSet student(lra.compressed * rotation);
  const ep2::OrthogonalMap omega = ep2::procrustes_solve(lra.compressed, student);
  std::printf("||Omega - R||_F: %.3e\n", (omega.matrix() - rotation).norm());
  std::printf("residual: %.3e\n",
              ep2::procrustes_residual(lra.compressed, student.matrix(), omega));
  return 0;
}
