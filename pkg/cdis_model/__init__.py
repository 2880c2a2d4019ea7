# ADC fitting, signal synthesis and CDIs mixing
