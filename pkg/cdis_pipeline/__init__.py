# Case handling, cohort objective, reports and rendering
