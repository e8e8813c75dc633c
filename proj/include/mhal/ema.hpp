#pragma once

#include <cstdint>

#include "mhal/params.hpp"

namespace mhal {

template <class T>
struct TeacherState {
  ParamSet<T> params;
  double beta = 0.99;
  std::int64_t step_count = 0;
};

// Deep copy of the student; the teacher never requires grad.
template <class T>
TeacherState<T> ema_init(const ParamSet<T>& student, double beta = 0.99);
// teacher = beta * teacher + (1 - beta) * student, elementwise, in place.
template <class T>
void ema_update(TeacherState<T>& teacher, const ParamSet<T>& student);

}  // namespace mhal
