#include "quadfit/template_io.hpp"

#include "json_util.hpp"

namespace quadfit {

using detail::json;

void save_template(const ModelTemplate& t, const std::string& path) {
  validate(t);
  json j;
  j["version"] = kTemplateSchemaVersion;
  j["n_beta"] = t.n_beta();
  j["n_joints"] = t.n_joints();
  j["v_count"] = t.n_vertices();
  j["f_count"] = t.n_faces();
  j["n_kp"] = t.n_keypoints();
  j["rest_vertices"] = detail::matrix_to_json(t.rest_vertices);
  j["faces"] = detail::matrix_to_json(t.faces);
  json basis = json::array();
  for (int v = 0; v < t.n_vertices(); ++v) basis.push_back(detail::matrix_to_json(t.shape_basis.middleRows<3>(3 * v)));
  j["shape_basis"] = std::move(basis);
  j["skin_weights"] = detail::matrix_to_json(t.skin_weights);
  j["joint_regressor"] = detail::matrix_to_json(t.joint_regressor);
  j["keypoint_regressor"] = detail::matrix_to_json(t.keypoint_regressor);
  j["parent"] = t.parent;
  j["family_names"] = t.family_names;
  j["pose_blendshapes"] = nullptr;
  detail::write_json_file(path, j);
}

ModelTemplate load_template(const std::string& path) {
  const json j = detail::read_json_file(path);
  const int version = detail::scalar<int>(j, "version");
  if (version != kTemplateSchemaVersion)
    throw ParseError(fmt::format("field 'version': unsupported template version {}", version));
  const int nb = detail::scalar<int>(j, "n_beta");
  const int nj = detail::scalar<int>(j, "n_joints");
  const int nv = detail::scalar<int>(j, "v_count");
  const int nf = detail::scalar<int>(j, "f_count");
  const int nk = detail::scalar<int>(j, "n_kp");
  if (nb < 0 || nj < 1 || nv < 1 || nf < 0 || nk < 0) throw ParseError("template counts must be non-negative");

  ModelTemplate t;
  t.rest_vertices = detail::matrix_from_json<MatrixX3dR>(detail::field(j, "rest_vertices"), "rest_vertices", nv, 3);
  t.faces = detail::matrix_from_json<MatrixX3iR>(detail::field(j, "faces"), "faces", nf, 3);
  const json& basis = detail::field(j, "shape_basis");
  if (!basis.is_array() || static_cast<int>(basis.size()) != nv)
    throw ParseError(fmt::format("field 'shape_basis': expected {} vertex blocks", nv));
  t.shape_basis.resize(3 * nv, nb);
  for (int v = 0; v < nv; ++v)
    t.shape_basis.middleRows<3>(3 * v) = detail::matrix_from_json<Eigen::MatrixXd>(basis[v], "shape_basis", 3, nb);
  t.skin_weights = detail::matrix_from_json<Eigen::MatrixXd>(detail::field(j, "skin_weights"), "skin_weights", nv, nj);
  t.joint_regressor =
      detail::matrix_from_json<Eigen::MatrixXd>(detail::field(j, "joint_regressor"), "joint_regressor", nj, nv);
  t.keypoint_regressor =
      detail::matrix_from_json<Eigen::MatrixXd>(detail::field(j, "keypoint_regressor"), "keypoint_regressor", nk, nv);
  try {
    t.parent = detail::field(j, "parent").get<std::vector<int>>();
    t.family_names = detail::field(j, "family_names").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("field 'parent'/'family_names': {}", e.what()));
  }
  if (static_cast<int>(t.parent.size()) != nj)
    throw ParseError(fmt::format("field 'parent': expected {} entries", nj));
  if (auto it = j.find("pose_blendshapes"); it != j.end() && !it->is_null())
    throw ParseError("field 'pose_blendshapes': reserved, must be null");

  t.rest_joints = t.joint_regressor * t.rest_vertices;
  validate(t);
  return t;
}

}  // namespace quadfit
