"""ICP refinement, fine rescoring and final score composition."""

from poseforge.refinement.icp import IcpTrace, final_score, icp_refine, rescore_fine, run_icp

__all__ = ["IcpTrace", "final_score", "icp_refine", "rescore_fine", "run_icp"]
