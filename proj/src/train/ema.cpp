#include "mhal/ema.hpp"

#include <stdexcept>

namespace mhal {

template <class T>
TeacherState<T> ema_init(const ParamSet<T>& student, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("ema: beta must lie in [0, 1]");
  TeacherState<T> t{student.clone(), beta, 0};
  t.params.set_requires_grad(false);
  return t;
}

template <class T>
void ema_update(TeacherState<T>& teacher, const ParamSet<T>& student) {
  if (!teacher.params.same_layout(student)) throw ShapeError("ema_update: teacher/student layout mismatch");
  const T b = static_cast<T>(teacher.beta);
  const T a = static_cast<T>(1.0 - teacher.beta);
  for (std::size_t i = 0; i < student.size(); ++i) {
    auto dst = teacher.params[i].mutable_data();
    auto src = student[i].data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = b * dst[j] + a * src[j];
  }
  ++teacher.step_count;
}

template TeacherState<float> ema_init(const ParamSet<float>&, double);
template TeacherState<double> ema_init(const ParamSet<double>&, double);
template void ema_update(TeacherState<float>&, const ParamSet<float>&);
template void ema_update(TeacherState<double>&, const ParamSet<double>&);

}  // namespace mhal
